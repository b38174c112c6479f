"""Form-preserving time evolution and its propagator kernel families.

The generator B(t) is self-adjoint for the form Q, so the exact flow
preserves Q.  Each time step is the exponential of the midpoint-sampled
generator, which keeps the discrete flow form-preserving to round-off and
is second-order accurate for smooth schedules.

Kernels on the grid have the factored shape E(i, j) = P_i A(j) per branch
(i above, below, or on the diagonal), where P_i is the prefix propagator
from the left grid end.  All kernel algebra, residual scans, and kernel
applications work directly on that factorization; the full (N+1)^2 family
of matrices is never materialized.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .krein import AdmissibleInvolution, KreinSpace, check_admissible
from .linalg import (
    cholesky_factor,
    expm_2x2_batch,
    hermitize,
    op_norm,
    projection_onto_along,
    sign_via_congruence,
)

__all__ = [
    "Evolution",
    "GeneratorSchedule",
    "IDENTITY_SPECS",
    "InOutData",
    "Kernel",
    "StabilityError",
    "TimeGrid",
    "all_kernels",
    "apply_kernel",
    "assemble_dense",
    "bisolution_kernels",
    "classical_kernels",
    "discrete_well_posed_inverse",
    "feynman_kernels",
    "identity_residuals",
    "in_out_involutions",
    "inverse_pair_adjoint_check",
    "pairing",
    "q_adjoint_dense",
    "solve_evolution",
    "transported_constant",
]


class StabilityError(ValueError):
    """The instantaneous generator has no spectral gap at zero."""


@dataclass
class TimeGrid:
    """Uniform grid on [t_minus, t_plus] with n cells (n + 1 nodes)."""

    t_minus: float
    t_plus: float
    n: int

    def __post_init__(self):
        if not (self.t_plus > self.t_minus):
            raise ValueError("empty time window")
        if self.n < 2:
            raise ValueError("need at least two cells")

    @property
    def dt(self) -> float:
        return (self.t_plus - self.t_minus) / self.n

    @property
    def nodes(self) -> np.ndarray:
        return self.t_minus + self.dt * np.arange(self.n + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return self.t_minus + self.dt * (np.arange(self.n) + 0.5)

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t_minus, self.t_plus, self.n * factor)


@dataclass
class GeneratorSchedule:
    """Time-dependent generator with smoothness metadata.

    sampler(t) returns the generator B(t); Q B(t) must be Hermitian so the
    flow preserves the form.  smoothness is one of 'piecewise-constant',
    'c0', 'c1', 'smooth' and is used to decide which convergence claims
    apply.  batch_sampler, when present, maps an array of times to a
    stacked array of generators and is only a speed path.
    """

    space: KreinSpace
    sampler: Callable[[float], np.ndarray]
    smoothness: str = "smooth"
    batch_sampler: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = ""

    def sample(self, ts: np.ndarray) -> np.ndarray:
        if self.batch_sampler is not None:
            return np.asarray(self.batch_sampler(ts), dtype=np.complex128)
        return np.stack([np.asarray(self.sampler(float(t)), dtype=np.complex128) for t in ts])


@dataclass
class Evolution:
    """Discrete flow: prefix propagators from the left end of the grid.

    prefix[i] is the propagator from node 0 to node i; prefix_inv[i] its
    inverse, accumulated from the exactly inverted steps rather than by
    matrix inversion.  The propagator between any two nodes is
    prefix[i] @ prefix_inv[j], one matrix product per retrieval.
    """

    grid: TimeGrid
    schedule: GeneratorSchedule
    scheme: str
    prefix: np.ndarray
    prefix_inv: np.ndarray

    def propagator(self, i: int, j: int) -> np.ndarray:
        return self.prefix[i] @ self.prefix_inv[j]

    def q_unitarity_report(self) -> dict:
        """Max residual of form preservation along the whole grid."""
        q = self.schedule.space.q
        res = [op_norm(p.conj().T @ q @ p - q) for p in self.prefix]
        worst = int(np.argmax(res))
        span = max(self.grid.t_plus - self.grid.t_minus, 1e-300)
        return {
            "max": float(np.max(res)),
            "max_per_unit_time": float(np.max(res)) / span,
            "worst_node": worst,
        }


def _step_exponentials(space: KreinSpace, b_mid: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """exp(-i dt B) and exp(+i dt B) for a stack of generators.

    When Q B is positive definite the exponential is taken through the
    eigendecomposition of the Hermitian matrix C Q^{-1} C^H (with
    Q B = C^H C), which keeps every step form-preserving to round-off.
    Otherwise falls back to scaling and squaring, still with the exact
    algebraic inverse from the sign flip of the step.
    """
    n, d, _ = b_mid.shape
    if d == 2:
        u = expm_2x2_batch(-1j * dt * b_mid)
        uinv = expm_2x2_batch(1j * dt * b_mid)
        return u, uinv
    q = space.q
    qinv = np.linalg.inv(q)
    u = np.empty_like(b_mid)
    uinv = np.empty_like(b_mid)
    for k in range(n):
        h = hermitize(q @ b_mid[k])
        try:
            c = cholesky_factor(h)
        except np.linalg.LinAlgError:
            c = None
        except sla.LinAlgError:
            c = None
        if c is not None:
            t = hermitize(c @ qinv @ c.conj().T)
            w, v = np.linalg.eigh(t)
            m = (v * np.exp(-1j * dt * w)) @ v.conj().T
            minv = (v * np.exp(1j * dt * w)) @ v.conj().T
            u[k] = np.linalg.solve(c, m @ c)
            uinv[k] = np.linalg.solve(c, minv @ c)
        else:
            u[k] = sla.expm(-1j * dt * b_mid[k])
            uinv[k] = sla.expm(1j * dt * b_mid[k])
    return u, uinv


def solve_evolution(schedule: GeneratorSchedule, grid: TimeGrid, scheme: str = "midpoint_exp") -> Evolution:
    """Integrate the flow of -i B(t) with exponential midpoint steps.

    'midpoint_exp' and 'piecewise_const_exp' share the stepping rule (the
    sample point is the cell midpoint, which lands inside the constant
    piece for cell-aligned piecewise schedules); the scheme tag records
    the caller's intent for reporting.
    """
    if scheme not in ("midpoint_exp", "piecewise_const_exp"):
        raise ValueError(f"unknown scheme '{scheme}'")
    space = schedule.space
    d = space.dim
    b_mid = schedule.sample(grid.midpoints)
    if b_mid.shape != (grid.n, d, d):
        raise ValueError(f"sampler returned shape {b_mid.shape}")
    u, uinv = _step_exponentials(space, b_mid, grid.dt)
    prefix = np.empty((grid.n + 1, d, d), dtype=np.complex128)
    prefix_inv = np.empty_like(prefix)
    prefix[0] = np.eye(d)
    prefix_inv[0] = np.eye(d)
    for i in range(grid.n):
        prefix[i + 1] = u[i] @ prefix[i]
        prefix_inv[i + 1] = prefix_inv[i] @ uinv[i]
    return Evolution(grid=grid, schedule=schedule, scheme=scheme, prefix=prefix, prefix_inv=prefix_inv)


@dataclass
class InOutData:
    """Boundary involutions anchored at the two grid ends.

    s_minus is the sign of the generator frozen at the left node, s_plus
    at the right node; gap_* is the spectral gap at zero of the similar
    Hermitian matrix, the strength of the stability that makes the sign
    well defined.
    """

    space: KreinSpace
    inv_minus: AdmissibleInvolution
    inv_plus: AdmissibleInvolution
    gap_minus: float
    gap_plus: float

    @property
    def s_minus(self) -> np.ndarray:
        return self.inv_minus.s

    @property
    def s_plus(self) -> np.ndarray:
        return self.inv_plus.s


def _frozen_sign(space: KreinSpace, b: np.ndarray, where: str) -> tuple[np.ndarray, float]:
    h = hermitize(space.q @ b)
    try:
        s, gap = sign_via_congruence(b, h)
    except (np.linalg.LinAlgError, sla.LinAlgError, ValueError) as exc:
        raise StabilityError(
            f"generator at {where} end is not strongly stable: "
            f"its Hermitian companion is not positive definite ({exc})"
        ) from exc
    tol = space.tol * max(1.0, op_norm(b))
    if gap <= 100.0 * tol:
        raise StabilityError(
            f"generator at {where} end is not strongly stable: spectral gap {gap:.3e}"
        )
    return s, gap


def in_out_involutions(schedule: GeneratorSchedule, grid: TimeGrid) -> InOutData:
    """Admissible involutions from the generator frozen at the grid ends."""
    space = schedule.space
    b_minus = np.asarray(schedule.sampler(grid.t_minus), dtype=np.complex128)
    b_plus = np.asarray(schedule.sampler(grid.t_plus), dtype=np.complex128)
    s_minus, gap_minus = _frozen_sign(space, b_minus, "left")
    s_plus, gap_plus = _frozen_sign(space, b_plus, "right")
    return InOutData(
        space=space,
        inv_minus=check_admissible(space, s_minus),
        inv_plus=check_admissible(space, s_plus),
        gap_minus=gap_minus,
        gap_plus=gap_plus,
    )


KERNEL_TAGS = (
    "PJ",
    "forward",
    "backward",
    "in_plus",
    "in_minus",
    "out_plus",
    "out_minus",
    "F",
    "Fbar",
)


@dataclass
class Kernel:
    """A two-time kernel in prefix-factored form.

    E(i, j) = coef_plus  * P_i @ a_plus[j]   for i > j
            = coef_minus * P_i @ a_minus[j]  for i < j
    and on the diagonal either the plus branch continued (diag 'plus') or
    zero (diag 'zero').  a_plus / a_minus may be None meaning that branch
    vanishes identically.
    """

    evolution: Evolution
    tag: str
    a_plus: np.ndarray | None
    a_minus: np.ndarray | None
    coef_plus: complex = 1.0
    coef_minus: complex = 1.0
    diag: str = "plus"
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> TimeGrid:
        return self.evolution.grid

    @property
    def space(self) -> KreinSpace:
        return self.evolution.schedule.space

    @property
    def weights(self) -> np.ndarray:
        return self.grid.trapezoid_weights()

    def branch_matrix(self, j: int, branch: str) -> np.ndarray:
        d = self.space.dim
        if branch == "plus" or (branch == "diag" and self.diag == "plus"):
            if self.a_plus is None:
                return np.zeros((d, d), dtype=np.complex128)
            return self.coef_plus * self.a_plus[j]
        if branch == "minus":
            if self.a_minus is None:
                return np.zeros((d, d), dtype=np.complex128)
            return self.coef_minus * self.a_minus[j]
        return np.zeros((d, d), dtype=np.complex128)

    def coincidence_matrix(self, j: int) -> np.ndarray:
        """Mean of the two one-sided limits at equal times.

        Quadrature across the jump of a two-time kernel is second-order
        accurate exactly when the jump node carries the average of the two
        branch limits, so this is the value the quadrature realization of
        the kernel uses on the diagonal.  The algebraic identities instead
        use the step-function convention recorded in the diag field.
        """
        return 0.5 * (self.branch_matrix(j, "plus") + self.branch_matrix(j, "minus"))

    def eval(self, i: int, j: int) -> np.ndarray:
        branch = "plus" if i > j else ("minus" if i < j else "diag")
        return self.evolution.prefix[i] @ self.branch_matrix(j, branch)


def classical_kernels(evolution: Evolution) -> dict[str, Kernel]:
    """Commutator-type kernel and its forward / backward truncations.

    The full kernel is the propagator itself on every pair of nodes; the
    forward kernel keeps the diagonal (so it acts like the identity there)
    while the backward kernel's diagonal is zero, which makes their
    difference reproduce the full kernel exactly on the grid.
    """
    pinv = evolution.prefix_inv
    return {
        "PJ": Kernel(evolution, "PJ", a_plus=pinv, a_minus=pinv, diag="plus"),
        "forward": Kernel(evolution, "forward", a_plus=pinv, a_minus=None, diag="plus"),
        "backward": Kernel(evolution, "backward", a_plus=None, a_minus=pinv,
                           coef_minus=-1.0, diag="zero"),
    }


def _const_times_pinv(evolution: Evolution, const: np.ndarray) -> np.ndarray:
    return np.einsum("ab,nbc->nac", const, evolution.prefix_inv, optimize=True)


def transported_constant(evolution: Evolution, x_at_node: np.ndarray, node: int) -> np.ndarray:
    """Pull a node-anchored matrix back to node 0 through the flow.

    X(t_j) = R(t_j, t_node) X R(t_node, t_j) becomes P_j X0 Pinv_j with
    X0 = Pinv_node X P_node.
    """
    return evolution.prefix_inv[node] @ x_at_node @ evolution.prefix[node]


def bisolution_kernels(evolution: Evolution, inout: InOutData) -> dict[str, Kernel]:
    """Single-frequency kernels for the two boundary-anchored involutions.

    in_plus / in_minus use the spectral projections of the left-anchored
    involution transported along the flow, out_* the right-anchored one.
    The minus kernels carry their conventional overall minus sign, so the
    full commutator kernel is plus minus minus for either anchoring.
    """
    n = evolution.grid.n
    out = {}
    for side, inv, node in (("in", inout.inv_minus, 0), ("out", inout.inv_plus, n)):
        pi_p0 = transported_constant(evolution, inv.pi_plus, node)
        pi_m0 = transported_constant(evolution, inv.pi_minus, node)
        ap = _const_times_pinv(evolution, pi_p0)
        am = _const_times_pinv(evolution, pi_m0)
        out[f"{side}_plus"] = Kernel(evolution, f"{side}_plus", a_plus=ap, a_minus=ap, diag="plus")
        out[f"{side}_minus"] = Kernel(
            evolution, f"{side}_minus", a_plus=am, a_minus=am,
            coef_plus=-1.0, coef_minus=-1.0, diag="plus",
        )
    return out


def _evolved_basis_family(evolution: Evolution, basis: np.ndarray, node: int) -> np.ndarray:
    """Evolve a subspace basis from an anchor node to every node.

    Each node's columns are re-orthonormalized (standard inner product);
    only the span matters to the projections built from them, and the
    re-orthonormalization keeps the stacked solves well conditioned.
    """
    n1 = evolution.grid.n + 1
    d, k = basis.shape
    fam = np.empty((n1, d, k), dtype=np.complex128)
    seed = evolution.prefix_inv[node] @ basis
    raw = np.einsum("nab,bk->nak", evolution.prefix, seed, optimize=True)
    for j in range(n1):
        qmat, _ = np.linalg.qr(raw[j])
        fam[j] = qmat
    return fam


def feynman_kernels(
    evolution: Evolution,
    inout: InOutData,
    cond_cap: float = 1e8,
) -> dict[str, Kernel]:
    """Time-ordered kernels from crossed boundary subspaces.

    The F kernel propagates, for later-than-source times, the component
    obtained by projecting onto the right-anchored plus subspace along the
    left-anchored minus subspace (both transported to the source time),
    and for earlier times minus the complementary projection.  Fbar swaps
    the roles of the two frequency signs.  Projections are built from
    stacked linear solves on evolved bases; the worst condition number of
    those solves is reported and a warning names the worst node when it
    exceeds cond_cap.
    """
    n1 = evolution.grid.n + 1
    d = evolution.schedule.space.dim
    n = evolution.grid.n
    fam_out_p = _evolved_basis_family(evolution, inout.inv_plus.basis_plus, n)
    fam_out_m = _evolved_basis_family(evolution, inout.inv_plus.basis_minus, n)
    fam_in_p = _evolved_basis_family(evolution, inout.inv_minus.basis_plus, 0)
    fam_in_m = _evolved_basis_family(evolution, inout.inv_minus.basis_minus, 0)
    pinv = evolution.prefix_inv
    eye = np.eye(d)
    out = {}
    for tag, fam_target, fam_other in (
        ("F", fam_out_p, fam_in_m),
        ("Fbar", fam_out_m, fam_in_p),
    ):
        ap = np.empty((n1, d, d), dtype=np.complex128)
        am = np.empty((n1, d, d), dtype=np.complex128)
        conds = np.empty(n1)
        for j in range(n1):
            lam, cond = projection_onto_along(fam_target[j], fam_other[j])
            conds[j] = cond
            ap[j] = pinv[j] @ lam
            am[j] = pinv[j] @ (lam - eye)
        worst = int(np.argmax(conds))
        if conds[worst] > cond_cap:
            warnings.warn(
                f"{tag} kernel: projection solve condition {conds[worst]:.3e} at node "
                f"{worst} (t = {evolution.grid.nodes[worst]:.6g}) exceeds cap {cond_cap:.1e}",
                stacklevel=2,
            )
        out[tag] = Kernel(
            evolution, tag, a_plus=ap, a_minus=am, diag="plus",
            meta={"max_condition": float(conds[worst]), "worst_node": worst},
        )
    return out


def all_kernels(evolution: Evolution, inout: InOutData) -> dict[str, Kernel]:
    ks = classical_kernels(evolution)
    ks.update(bisolution_kernels(evolution, inout))
    ks.update(feynman_kernels(evolution, inout))
    return ks


def apply_kernel(kernel: Kernel, f: np.ndarray) -> np.ndarray:
    """Trapezoidal action of a kernel on a grid function.

    f has shape (n + 1, dim) (a single grid function) or (n + 1, dim, m).
    The coincidence node carries the mean of the two one-sided kernel
    limits, which is the composite-trapezoid rule across the jump and
    keeps the action second-order accurate.  Cost is linear in the number
    of nodes thanks to the prefix-factored branches.
    """
    ev = kernel.evolution
    n1 = ev.grid.n + 1
    d = ev.schedule.space.dim
    squeeze = f.ndim == 2
    fv = f[:, :, None] if squeeze else f
    if fv.shape[0] != n1 or fv.shape[1] != d:
        raise ValueError(f"grid function has shape {f.shape}, expected ({n1}, {d}, ...)")
    w = kernel.weights
    m = fv.shape[2]
    acc = np.zeros((n1, d, m), dtype=np.complex128)
    if kernel.a_plus is not None:
        vp = np.einsum("nab,nbm->nam", kernel.a_plus, fv, optimize=True) * w[:, None, None]
        cum = np.cumsum(vp, axis=0)
        # strictly earlier sources; half of the coincidence term below
        acc[1:] += kernel.coef_plus * cum[:-1]
        acc += 0.5 * kernel.coef_plus * vp
    if kernel.a_minus is not None:
        vm = np.einsum("nab,nbm->nam", kernel.a_minus, fv, optimize=True) * w[:, None, None]
        rcum = np.cumsum(vm[::-1], axis=0)[::-1]
        acc[:-1] += kernel.coef_minus * rcum[1:]
        acc += 0.5 * kernel.coef_minus * vm
    res = np.einsum("nab,nbm->nam", ev.prefix, acc, optimize=True)
    return res[:, :, 0] if squeeze else res


def pairing(kernel_weights: np.ndarray, q: np.ndarray, x: np.ndarray, y: np.ndarray) -> complex:
    """Quadrature form pairing sum_i w_i x(t_i)^H Q y(t_i)."""
    return complex(np.einsum("n,na,ab,nb->", kernel_weights, x.conj(), q, y, optimize=True))


# ---------------------------------------------------------------------------
# identity residual engine


def _gram(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-node d x d Grams a_n^H b_n."""
    return np.einsum("nba,nbc->nac", a.conj(), b, optimize=True)


def _pair_residual_sq(gram_ll, gram_rr, gram_lr, ml, mr, mlr, mask):
    """Max over masked (i, j) of ||L_i D_j - R_i E_j||_F^2 via the trace trick."""
    best = 0.0
    n1 = gram_ll.shape[0]
    chunk = max(1, int(2**21 // max(ml.shape[0], 1)))
    for lo in range(0, n1, chunk):
        hi = min(n1, lo + chunk)
        block = np.einsum("iab,jba->ij", gram_ll[lo:hi], ml, optimize=True).real
        if gram_rr is not None:
            block += np.einsum("iab,jba->ij", gram_rr[lo:hi], mr, optimize=True).real
            block -= 2.0 * np.einsum("iab,jba->ij", gram_lr[lo:hi], mlr, optimize=True).real
        sub = mask[lo:hi]
        if np.any(sub):
            best = max(best, float(np.max(block[sub])))
    return max(best, 0.0)


class _KernelSide:
    """Branch arrays of a linear combination of kernels (one evolution)."""

    def __init__(self, evolution: Evolution, terms: list[tuple[complex, Kernel]]):
        n1 = evolution.grid.n + 1
        d = evolution.schedule.space.dim
        self.prefix = evolution.prefix
        self.plus = np.zeros((n1, d, d), dtype=np.complex128)
        self.minus = np.zeros((n1, d, d), dtype=np.complex128)
        self.diag = np.zeros((n1, d, d), dtype=np.complex128)
        for coef, k in terms:
            if k.a_plus is not None:
                self.plus += (coef * k.coef_plus) * k.a_plus
                if k.diag == "plus":
                    self.diag += (coef * k.coef_plus) * k.a_plus
            if k.a_minus is not None:
                self.minus += (coef * k.coef_minus) * k.a_minus


class _ConstantSide:
    """Branch arrays for sum_k coef_k X_k @ Pinv, all branches equal."""

    def __init__(self, evolution: Evolution, const: np.ndarray):
        arr = _const_times_pinv(evolution, const)
        self.prefix = evolution.prefix
        self.plus = arr
        self.minus = arr
        self.diag = arr


def _side_residual(left, right) -> dict:
    """Max Frobenius mismatch of two kernel sides over all node pairs."""
    n1 = left.plus.shape[0]
    idx = np.arange(n1)
    same = left.prefix is right.prefix
    out = {}
    gll = grr = glr = None
    for branch, mask in (
        ("plus", idx[:, None] > idx[None, :]),
        ("minus", idx[:, None] < idx[None, :]),
    ):
        dl = getattr(left, branch)
        dr = getattr(right, branch)
        if same:
            if gll is None:
                gll = _gram(left.prefix, left.prefix)
            delta = dl - dr
            m = np.einsum("nab,ncb->nac", delta, delta.conj(), optimize=True)
            val = _pair_residual_sq(gll, None, None, m, None, None, mask)
        else:
            if gll is None:
                gll = _gram(left.prefix, left.prefix)
                grr = _gram(right.prefix, right.prefix)
                glr = _gram(left.prefix, right.prefix)
            ml = np.einsum("nab,ncb->nac", dl, dl.conj(), optimize=True)
            mr = np.einsum("nab,ncb->nac", dr, dr.conj(), optimize=True)
            # cross term is Re tr((L_i dl_j)^H (R_i dr_j)) = Re tr((L^H R)_i dr_j dl_j^H)
            mlr = np.einsum("nab,ncb->nac", dr, dl.conj(), optimize=True)
            val = _pair_residual_sq(gll, grr, glr, ml, mr, mlr, mask)
        out[branch] = float(np.sqrt(max(val, 0.0)))
    # coincidence set: one small product per node
    dd = np.einsum("nab,nbc->nac", left.prefix, left.diag, optimize=True) \
        - np.einsum("nab,nbc->nac", right.prefix, right.diag, optimize=True)
    out["diag"] = float(np.max(np.linalg.norm(dd, axis=(1, 2))))
    out["max"] = max(out.values())
    return out


def _commutator_constants(evolution: Evolution, inout: InOutData) -> dict[str, np.ndarray]:
    """Node-0 representatives of the transported boundary involutions."""
    n = evolution.grid.n
    s_plus0 = transported_constant(evolution, inout.s_plus, n)
    s_minus0 = transported_constant(evolution, inout.s_minus, 0)
    eye = np.eye(evolution.schedule.space.dim)
    ups0 = 0.25 * (2.0 * eye + s_plus0 @ s_minus0 + s_minus0 @ s_plus0)
    return {"s_plus0": s_plus0, "s_minus0": s_minus0, "upsilon0": ups0}


IDENTITY_SPECS = [
    {
        "key": "pj_forward_backward",
        "description": "full kernel equals forward minus backward",
        "stationary_only": False,
    },
    {
        "key": "pj_in_split",
        "description": "full kernel equals the left-anchored frequency splitting",
        "stationary_only": False,
    },
    {
        "key": "pj_out_split",
        "description": "full kernel equals the right-anchored frequency splitting",
        "stationary_only": False,
    },
    {
        "key": "involution_difference",
        "description": "summed frequency kernels differ by the transported involutions",
        "stationary_only": False,
    },
    {
        "key": "feynman_commutator_sum",
        "description": "time-ordered pair minus classical pair is the involution commutator",
        "stationary_only": False,
    },
    {
        "key": "feynman_nested_commutator",
        "description": "time-ordered difference minus mean frequency kernels is the nested commutator",
        "stationary_only": False,
    },
    {
        "key": "feynman_sum_classical",
        "description": "commuting boundary data: time-ordered pair equals classical pair",
        "stationary_only": True,
    },
    {
        "key": "feynman_difference_bisolutions",
        "description": "commuting boundary data: time-ordered difference equals summed frequencies",
        "stationary_only": True,
    },
    {
        "key": "q_adjoint_pj",
        "description": "full kernel is self-adjoint for the form under the two-time pairing",
        "stationary_only": False,
    },
    {
        "key": "q_adjoint_forward_backward",
        "description": "forward and backward kernels are mutual negative form-adjoints",
        "stationary_only": False,
    },
    {
        "key": "q_adjoint_feynman",
        "description": "time-ordered kernels are mutual negative form-adjoints",
        "stationary_only": False,
    },
    {
        "key": "frequency_kernel_positivity",
        "description": "single-frequency kernels are nonnegative forms",
        "stationary_only": False,
    },
]


def _adjoint_kernel_residual(kern: Kernel, other: Kernel, sign: float) -> float:
    """Max over i != j of || Q^{-1} E(j,i)^H Q - sign * F(i,j) ||_F.

    The diagonal is excluded: the two-time kernels are only defined up to
    their value on the coincidence set, where the step-function
    conventions of a kernel and of its adjoint partner legitimately
    disagree.
    """
    ev = kern.evolution
    q = ev.schedule.space.q
    qinv = np.linalg.inv(q)
    n1 = ev.grid.n + 1
    worst = 0.0
    stride = max(1, n1 // 160)
    for i in range(0, n1, stride):
        for j in range(0, n1, stride):
            if i == j:
                continue
            lhs = qinv @ kern.eval(j, i).conj().T @ q
            rhs = sign * other.eval(i, j)
            worst = max(worst, float(np.linalg.norm(lhs - rhs)))
    return worst


def _positivity_value(kern: Kernel, rng: np.random.Generator, probes: int = 6) -> float:
    """Smallest quadrature form value over random probe functions."""
    ev = kern.evolution
    n1 = ev.grid.n + 1
    d = ev.schedule.space.dim
    q = ev.schedule.space.q
    w = kern.weights
    vals = []
    for _ in range(probes):
        f = rng.standard_normal((n1, d)) + 1j * rng.standard_normal((n1, d))
        g = apply_kernel(kern, f)
        v = pairing(w, q, f, g)
        vals.append(v.real / max(np.linalg.norm(f) ** 2, 1e-300))
    return float(np.min(vals))


def identity_residuals(
    kernels: dict[str, Kernel],
    inout: InOutData,
    reference: Evolution | None = None,
    rng: np.random.Generator | None = None,
) -> dict:
    """Residual report for the kernel identity family.

    With no reference, both sides of every identity are assembled from the
    same discrete flow, so the residuals measure the structural identities
    plus round-off.  With a reference evolution on a refinement of the same
    window (node set containing this grid's nodes), the right-hand sides
    are rebuilt from the reference flow restricted to the coarse nodes, so
    the residuals expose the discretization error of the coarse flow and
    decay at second order for smooth schedules.
    """
    some = kernels["PJ"]
    ev = some.evolution
    rng = rng or np.random.default_rng(0)
    ref_ev, factor = _restricted_reference(ev, reference)
    con = _commutator_constants(ev, inout)
    rcon = _commutator_constants(ref_ev, inout) if ref_ev is not ev else con
    eye = np.eye(ev.schedule.space.dim)

    def const_side(x0_builder):
        if ref_ev is ev:
            return _ConstantSide(ev, x0_builder(con))
        side = _ConstantSide(ref_ev, x0_builder(rcon))
        side.plus = side.plus[::factor]
        side.minus = side.minus[::factor]
        side.diag = side.diag[::factor]
        side.prefix = ref_ev.prefix[::factor]
        return side

    def kernel_side(terms):
        return _KernelSide(ev, terms)

    report = {}
    k = kernels
    report["pj_forward_backward"] = _side_residual(
        kernel_side([(1.0, k["PJ"])]),
        kernel_side([(1.0, k["forward"]), (-1.0, k["backward"])]),
    )
    report["pj_in_split"] = _side_residual(
        kernel_side([(1.0, k["PJ"])]),
        kernel_side([(1.0, k["in_plus"]), (-1.0, k["in_minus"])]),
    )
    report["pj_out_split"] = _side_residual(
        kernel_side([(1.0, k["PJ"])]),
        kernel_side([(1.0, k["out_plus"]), (-1.0, k["out_minus"])]),
    )
    report["involution_difference"] = _side_residual(
        kernel_side([
            (1.0, k["out_plus"]), (1.0, k["out_minus"]),
            (-1.0, k["in_plus"]), (-1.0, k["in_minus"]),
        ]),
        const_side(lambda c: c["s_plus0"] - c["s_minus0"]),
    )
    report["feynman_commutator_sum"] = _side_residual(
        kernel_side([
            (1.0, k["F"]), (1.0, k["Fbar"]),
            (-1.0, k["forward"]), (-1.0, k["backward"]),
        ]),
        const_side(lambda c: 0.25 * np.linalg.solve(
            c["upsilon0"], c["s_plus0"] @ c["s_minus0"] - c["s_minus0"] @ c["s_plus0"]
        )),
    )
    report["feynman_nested_commutator"] = _side_residual(
        kernel_side([
            (1.0, k["F"]), (-1.0, k["Fbar"]),
            (-0.5, k["out_plus"]), (-0.5, k["out_minus"]),
            (-0.5, k["in_plus"]), (-0.5, k["in_minus"]),
        ]),
        const_side(lambda c: _nested_commutator_constant(c)),
    )
    stationary = op_norm(con["s_plus0"] @ con["s_minus0"] - con["s_minus0"] @ con["s_plus0"]) \
        <= 1e-8 * max(1.0, op_norm(con["s_plus0"])) ** 2
    if stationary:
        report["feynman_sum_classical"] = _side_residual(
            kernel_side([(1.0, k["F"]), (1.0, k["Fbar"])]),
            kernel_side([(1.0, k["forward"]), (1.0, k["backward"])]),
        )
        report["feynman_difference_bisolutions"] = _side_residual(
            kernel_side([(1.0, k["F"]), (-1.0, k["Fbar"])]),
            kernel_side([(1.0, k["in_plus"]), (1.0, k["in_minus"])]),
        )
    report["q_adjoint_pj"] = {"max": _adjoint_kernel_residual(k["PJ"], k["PJ"], 1.0)}
    report["q_adjoint_forward_backward"] = {
        "max": _adjoint_kernel_residual(k["forward"], k["backward"], -1.0)
    }
    report["q_adjoint_feynman"] = {"max": _adjoint_kernel_residual(k["F"], k["Fbar"], -1.0)}
    report["frequency_kernel_positivity"] = {
        "max": float(max(0.0, -min(
            _positivity_value(k[t], rng) for t in ("in_plus", "in_minus", "out_plus", "out_minus")
        )))
    }
    report["stationary"] = stationary
    return report


def _nested_commutator_constant(c: dict) -> np.ndarray:
    comm = c["s_plus0"] @ c["s_minus0"] - c["s_minus0"] @ c["s_plus0"]
    diff = c["s_plus0"] - c["s_minus0"]
    nested = diff @ comm - comm @ diff
    return (1.0 / 16.0) * np.linalg.solve(c["upsilon0"], nested)


def _restricted_reference(ev: Evolution, reference: Evolution | None):
    if reference is None:
        return ev, 1
    if reference.grid.n % ev.grid.n != 0:
        raise ValueError("reference grid must refine the kernel grid by an integer factor")
    if not np.isclose(reference.grid.t_minus, ev.grid.t_minus) or not np.isclose(
        reference.grid.t_plus, ev.grid.t_plus
    ):
        raise ValueError("reference grid must cover the same window")
    return reference, reference.grid.n // ev.grid.n


# ---------------------------------------------------------------------------
# dense inversion


def discrete_well_posed_inverse(
    kernel: Kernel, max_dense: int = 3200, coincidence: str = "symmetric"
) -> dict:
    """Dense inverse of the quadrature operator a kernel defines.

    Assembles T[(i,a),(j,b)] = w_j E(i,j)[a,b], LU-factorizes it, and
    returns the inverse matrix together with a residual and condition
    report.  The coincidence value defaults to the jump-averaged one that
    apply_kernel uses (the step-function convention leaves the
    time-ordered kernels with an exactly invisible boundary subspace, so
    their assembly would always be singular).  Only sensible for small
    grids; raises when the dense size exceeds max_dense or when the
    kernel is not injective at this discretization.
    """
    ev = kernel.evolution
    size = (ev.grid.n + 1) * ev.schedule.space.dim
    if size > max_dense:
        raise ValueError(f"dense system of size {size} exceeds the cap {max_dense}")
    t = assemble_dense(kernel, coincidence=coincidence)
    cond = float(np.linalg.cond(t))
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps ** 0.9:
        raise ValueError(
            f"kernel not injective at this discretization (condition {cond:.3e})"
        )
    inv = np.linalg.inv(t)
    resid = op_norm(inv @ t - np.eye(size))
    return {
        "inverse": inv,
        "dense": t,
        "condition": cond,
        "identity_residual": resid,
        "coincidence": coincidence,
    }


def assemble_dense(kernel: Kernel, coincidence: str = "symmetric") -> np.ndarray:
    """Dense quadrature-operator matrix of a kernel (small grids only).

    coincidence 'symmetric' places the jump-averaged value on the
    diagonal, matching apply_kernel; 'kernel' places the kernel's own
    step-function convention there, matching the algebraic identities.
    """
    if coincidence not in ("symmetric", "kernel"):
        raise ValueError(f"unknown coincidence convention '{coincidence}'")
    ev = kernel.evolution
    n1 = ev.grid.n + 1
    d = ev.schedule.space.dim
    w = kernel.weights
    t = np.zeros((n1, d, n1, d), dtype=np.complex128)
    for j in range(n1):
        if kernel.a_plus is not None:
            col = np.einsum(
                "nab,bc->nac", ev.prefix[j + 1:], kernel.coef_plus * kernel.a_plus[j],
                optimize=True,
            )
            t[j + 1:, :, j, :] = w[j] * col
        if kernel.a_minus is not None:
            col = np.einsum(
                "nab,bc->nac", ev.prefix[:j], kernel.coef_minus * kernel.a_minus[j],
                optimize=True,
            )
            t[:j, :, j, :] = w[j] * col
        diag = (
            kernel.coincidence_matrix(j)
            if coincidence == "symmetric"
            else kernel.branch_matrix(j, "diag")
        )
        t[j, :, j, :] = w[j] * ev.prefix[j] @ diag
    return t.reshape(n1 * d, n1 * d)


def q_adjoint_dense(matrix: np.ndarray, kernel: Kernel) -> np.ndarray:
    """Adjoint of a dense grid operator for the weighted form pairing.

    The pairing is <x, y> = sum_i w_i x_i^H Q y_i; the adjoint is
    W^{-1} Q^{-1} A^H Q W with W the weight-block diagonal, i.e.
    (A*)_{ij} = (w_j / w_i) Q^{-1} A_{ji}^H Q blockwise.
    """
    q = kernel.evolution.schedule.space.q
    w = kernel.weights
    qw = np.kron(np.diag(w), q)
    return np.linalg.solve(qw, matrix.conj().T @ qw)


def inverse_pair_adjoint_check(kern_f: Kernel, kern_fbar: Kernel) -> dict:
    """Discrete adjoint relation between the two time-ordered kernels.

    The two kernels are negatives of each other's form adjoints, and with
    the jump-averaged coincidence value that relation holds blockwise on
    the grid, diagonal included.  Returns the residual of the assembled
    relation and of the same relation pushed through the dense inverses
    (so the inverse of one kernel is minus the form adjoint of the
    inverse of the other), both relative.
    """
    tf = assemble_dense(kern_f)
    tfb = assemble_dense(kern_fbar)
    adj = q_adjoint_dense(tf, kern_f)
    op_scale = max(op_norm(tf), op_norm(tfb))
    exact = op_norm(adj + tfb) / max(op_scale, 1e-300)
    minv_f = np.linalg.inv(tf)
    minv_fb = np.linalg.inv(tfb)
    pushed = op_norm(q_adjoint_dense(minv_f, kern_f) + minv_fb)
    pushed /= max(op_norm(minv_fb), 1e-300)
    return {"kernel_relation": float(exact), "inverse_relation": float(pushed)}
