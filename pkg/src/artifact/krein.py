"""Indefinite-metric phase spaces and pairs of compatible decompositions.

A space carries an invertible Hermitian form Q.  An admissible involution
S (S^2 = 1, S^H Q S = Q, Q S positive definite) splits the space into a
positive part Z+ and a negative part Z-, and G = Q S is the compatible
positive scalar product.  Two admissible involutions are generically
complementary; the pair calculus below produces the oblique projections
onto one involution's eigenspaces along the other's, and the off-diagonal
operator c that measures how far apart the two decompositions are.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    as_complex_matrix,
    canonical_phase,
    default_tol,
    g_adjoint,
    g_orthonormalize,
    herm_residual,
    hermitian_sqrt_in_g,
    hermitize,
    op_norm,
    projection_onto_along,
    q_adjoint,
    range_basis,
)

__all__ = [
    "AdmissibilityError",
    "AdmissibleInvolution",
    "BogoliubovBlocks",
    "ComplementarityError",
    "InvolutionPairAnalysis",
    "KreinSpace",
    "SingularBlockError",
    "Subspace",
    "SubspaceClassification",
    "analyze_pair",
    "bogoliubov_blocks",
    "check_admissible",
    "classify_subspace",
    "q_complement",
    "verify_pseudo_unitary",
]


class AdmissibilityError(ValueError):
    """An involution failed one of the admissibility invariants."""


class ComplementarityError(ValueError):
    """Two decompositions are not complementary enough to analyze."""


class SingularBlockError(ValueError):
    """A corner block that must be invertible is singular."""


@dataclass
class KreinSpace:
    """A finite-dimensional space with an invertible Hermitian form."""

    dim: int
    q: np.ndarray
    tol: float = 0.0

    def __post_init__(self):
        self.q = as_complex_matrix(self.q)
        if self.q.shape != (self.dim, self.dim):
            raise ValueError(f"form shape {self.q.shape} does not match dim {self.dim}")
        scale = op_norm(self.q)
        hres = herm_residual(self.q)
        if self.tol <= 0:
            self.tol = default_tol(self.dim, scale)
        if hres > self.tol:
            raise ValueError(f"form is not Hermitian (residual {hres:.3e})")
        # invertibility: smallest singular value well above round-off
        smin = float(np.linalg.svd(self.q, compute_uv=False)[-1])
        if smin <= self.tol:
            raise ValueError(f"form is numerically singular (smallest singular value {smin:.3e})")


@dataclass
class Subspace:
    """A subspace stored as an orthonormal basis in the standard inner product."""

    basis: np.ndarray

    @classmethod
    def from_columns(cls, columns: np.ndarray) -> "Subspace":
        return cls(range_basis(np.atleast_2d(np.asarray(columns, dtype=np.complex128))))

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


@dataclass
class AdmissibleInvolution:
    """An admissible involution with its spectral projections and metric.

    basis_plus / basis_minus are G-orthonormal bases of the +1 / -1
    eigenspaces; coordinates taken against them turn G-adjoints into plain
    conjugate transposes, which is how all block computations are done.
    """

    space: KreinSpace
    s: np.ndarray
    pi_plus: np.ndarray
    pi_minus: np.ndarray
    g: np.ndarray
    basis_plus: np.ndarray
    basis_minus: np.ndarray
    residuals: dict = field(default_factory=dict)

    @property
    def k_plus(self) -> int:
        return self.basis_plus.shape[1]

    @property
    def k_minus(self) -> int:
        return self.basis_minus.shape[1]

    def coords_plus(self, vectors: np.ndarray) -> np.ndarray:
        """G-orthonormal coordinates of the + components of the columns."""
        return self.basis_plus.conj().T @ self.g @ vectors

    def coords_minus(self, vectors: np.ndarray) -> np.ndarray:
        return self.basis_minus.conj().T @ self.g @ vectors


def admissibility_report(space: KreinSpace, s: np.ndarray) -> dict:
    """Residuals of the three admissibility invariants, in checking order."""
    s = as_complex_matrix(s)
    q = space.q
    eye = np.eye(space.dim)
    g = q @ s
    w = np.linalg.eigvalsh(hermitize(g))
    return {
        "involution": op_norm(s @ s - eye),
        "metric_hermitian": herm_residual(g),
        "metric_positive": float(max(0.0, -np.min(w))) if np.min(w) <= 0 else 0.0,
        "min_metric_eigenvalue": float(np.min(w)),
    }


def check_admissible(space: KreinSpace, s: np.ndarray) -> AdmissibleInvolution:
    """Validate an involution against the space's form and package it.

    Raises AdmissibilityError naming the first failed invariant together
    with its residual.
    """
    s = as_complex_matrix(s)
    if s.shape != (space.dim, space.dim):
        raise ValueError(f"involution shape {s.shape} does not match dim {space.dim}")
    tol = space.tol * max(1.0, op_norm(s) ** 2)
    rep = admissibility_report(space, s)
    if rep["involution"] > tol:
        raise AdmissibilityError(f"involution: ||S^2 - 1|| = {rep['involution']:.3e} exceeds {tol:.3e}")
    if rep["metric_hermitian"] > tol:
        raise AdmissibilityError(
            f"metric_hermitian: ||QS - (QS)^H|| = {rep['metric_hermitian']:.3e} exceeds {tol:.3e}"
        )
    if rep["min_metric_eigenvalue"] <= tol:
        raise AdmissibilityError(
            f"metric_positive: min eig(QS) = {rep['min_metric_eigenvalue']:.3e} is not positive"
        )
    g = hermitize(space.q @ s)
    eye = np.eye(space.dim)
    pi_plus = 0.5 * (eye + s)
    pi_minus = 0.5 * (eye - s)
    basis_plus = _eigenbasis(pi_plus, g)
    basis_minus = _eigenbasis(pi_minus, g)
    if basis_plus.shape[1] + basis_minus.shape[1] != space.dim:
        raise AdmissibilityError(
            f"eigenspace dimensions {basis_plus.shape[1]} + {basis_minus.shape[1]} "
            f"do not fill the space"
        )
    return AdmissibleInvolution(
        space=space,
        s=s,
        pi_plus=pi_plus,
        pi_minus=pi_minus,
        g=g,
        basis_plus=basis_plus,
        basis_minus=basis_minus,
        residuals=rep,
    )


def _eigenbasis(projector: np.ndarray, g: np.ndarray) -> np.ndarray:
    b = range_basis(projector)
    if b.shape[1] == 0:
        return b
    return canonical_phase(g_orthonormalize(b, g))


def q_complement(space: KreinSpace, z: Subspace) -> Subspace:
    """Orthogonal companion of a subspace with respect to the form Q.

    Vectors v with (z | Q v) = 0 for every z in the subspace.  Taking the
    companion twice returns the original subspace.
    """
    b = z.basis
    if b.shape[0] != space.dim:
        raise ValueError("subspace lives in a different dimension")
    a = b.conj().T @ space.q
    # null space of a: right-singular vectors with vanishing singular value
    u, sv, vh = np.linalg.svd(a, full_matrices=True)
    rank = int(np.sum(sv > max(a.shape) * np.finfo(float).eps * (sv[0] if sv.size else 1.0)))
    return Subspace(canonical_phase(vh[rank:].conj().T))


@dataclass
class SubspaceClassification:
    label: str
    compressed_eigenvalues: np.ndarray
    complement_eigenvalues: np.ndarray
    degenerate: bool


def classify_subspace(space: KreinSpace, z: Subspace) -> SubspaceClassification:
    """Sign type of the form compressed to a subspace, with maximality.

    Labels: m-positive / m-negative (definite and maximal), positive-not-
    maximal / negative-not-maximal, indefinite.  A compressed form with an
    eigenvalue at numerical zero sets the degenerate flag instead of
    forcing a definiteness claim.
    """
    b = z.basis
    comp = q_complement(space, z)
    form = np.linalg.eigvalsh(hermitize(b.conj().T @ space.q @ b)) if z.dim else np.array([])
    cform = (
        np.linalg.eigvalsh(hermitize(comp.basis.conj().T @ space.q @ comp.basis))
        if comp.dim
        else np.array([])
    )
    tol = space.tol
    degenerate = bool(form.size and np.min(np.abs(form)) <= tol)
    pos = form.size > 0 and np.min(form) > tol
    neg = form.size > 0 and np.max(form) < -tol
    if pos:
        # maximal iff nothing positive is left on the companion
        maximal = cform.size == 0 or np.max(cform) <= tol
        label = "m-positive" if maximal else "positive-not-maximal"
    elif neg:
        maximal = cform.size == 0 or np.min(cform) >= -tol
        label = "m-negative" if maximal else "negative-not-maximal"
    else:
        label = "indefinite"
    return SubspaceClassification(
        label=label,
        compressed_eigenvalues=form,
        complement_eigenvalues=cform,
        degenerate=degenerate,
    )


@dataclass
class InvolutionPairAnalysis:
    """Joint data of two admissible involutions on the same space.

    All operator fields are full-space matrices.  c maps the minus
    eigenspace of the first involution into its plus eigenspace and has
    norm < 1 for a complementary pair; the four lambda fields are the
    oblique projections onto an eigenspace of one involution along the
    opposite eigenspace of the other.  m is the positive square root of
    K = S2 S1 and conjugates the first involution into the second.
    """

    space: KreinSpace
    inv1: AdmissibleInvolution
    inv2: AdmissibleInvolution
    k: np.ndarray
    upsilon: np.ndarray
    upsilon_inv: np.ndarray
    c_op: np.ndarray
    c_star_op: np.ndarray
    c: np.ndarray
    c_norm: float
    m: np.ndarray
    lambda_12_plus: np.ndarray
    lambda_21_minus: np.ndarray
    lambda_21_plus: np.ndarray
    lambda_12_minus: np.ndarray
    residuals: dict = field(default_factory=dict)


def analyze_pair(space: KreinSpace, s1, s2) -> InvolutionPairAnalysis:
    """Pair calculus for two admissible involutions.

    Raises ComplementarityError when the mean-square of the two involutions
    is singular, which is exactly the breakdown of complementarity between
    the crossed eigenspaces.
    """
    inv1 = s1 if isinstance(s1, AdmissibleInvolution) else check_admissible(space, s1)
    inv2 = s2 if isinstance(s2, AdmissibleInvolution) else check_admissible(space, s2)
    eye = np.eye(space.dim)
    k = inv2.s @ inv1.s
    anti = 2.0 * eye + inv1.s @ inv2.s + inv2.s @ inv1.s
    # upsilon = ((S1 + S2)/2)^2; singular iff S1 + S2 is
    sv = np.linalg.svd(anti, compute_uv=False)
    scale = max(1.0, float(sv[0]))
    if sv[-1] <= 100.0 * space.tol * scale:
        raise ComplementarityError(
            f"complementarity failure: smallest singular value of (S1+S2)^2 "
            f"is {0.25 * sv[-1]:.3e}"
        )
    upsilon = 0.25 * anti
    upsilon_inv = 4.0 * np.linalg.inv(anti)
    w = np.linalg.solve(eye + k, eye - k)
    c_op = inv1.pi_plus @ w @ inv1.pi_minus
    c_star_op = inv1.pi_minus @ w @ inv1.pi_plus
    c_coord = inv1.basis_plus.conj().T @ inv1.g @ c_op @ inv1.basis_minus
    c_norm = op_norm(c_coord)
    m = hermitian_sqrt_in_g(k, inv1.g)
    lam_12_plus = inv1.pi_plus @ upsilon_inv @ inv2.pi_plus
    lam_21_minus = inv2.pi_minus @ upsilon_inv @ inv1.pi_minus
    lam_21_plus = inv2.pi_plus @ upsilon_inv @ inv1.pi_plus
    lam_12_minus = inv1.pi_minus @ upsilon_inv @ inv2.pi_minus
    res = _pair_residuals(
        space, inv1, inv2, k, upsilon, upsilon_inv, w, c_op, c_star_op, m,
        lam_12_plus, lam_21_minus, lam_21_plus, lam_12_minus,
    )
    return InvolutionPairAnalysis(
        space=space,
        inv1=inv1,
        inv2=inv2,
        k=k,
        upsilon=upsilon,
        upsilon_inv=upsilon_inv,
        c_op=c_op,
        c_star_op=c_star_op,
        c=c_coord,
        c_norm=c_norm,
        m=m,
        lambda_12_plus=lam_12_plus,
        lambda_21_minus=lam_21_minus,
        lambda_21_plus=lam_21_plus,
        lambda_12_minus=lam_12_minus,
        residuals=res,
    )


def _pair_residuals(space, inv1, inv2, k, upsilon, upsilon_inv, w, c_op, c_star_op, m,
                    l12p, l21m, l21p, l12m) -> dict:
    eye = np.eye(space.dim)
    s1, s2 = inv1.s, inv2.s
    res = {}
    res["upsilon_square_form"] = op_norm(upsilon - 0.25 * (s1 + s2) @ (s1 + s2))
    res["cayley_off_diagonal"] = op_norm(w - (c_op + c_star_op))
    res["c_star_is_adjoint"] = op_norm(g_adjoint(c_op, inv1.g) - c_star_op)
    res["upsilon_inv_blocks"] = op_norm(
        upsilon_inv - (eye - c_op @ c_star_op - c_star_op @ c_op)
    )
    res["projection_sum_1"] = op_norm(l12p + l21m - eye)
    res["projection_sum_2"] = op_norm(l21p + l12m - eye)
    for name, lam in (("lambda_12_plus", l12p), ("lambda_21_minus", l21m),
                      ("lambda_21_plus", l21p), ("lambda_12_minus", l12m)):
        res[f"{name}_idempotent"] = op_norm(lam @ lam - lam)
    # defining range/kernel action on basis vectors
    res["lambda_12_plus_fixes"] = op_norm(l12p @ inv1.basis_plus - inv1.basis_plus)
    res["lambda_12_plus_kills"] = op_norm(l12p @ inv2.basis_minus)
    res["lambda_21_minus_fixes"] = op_norm(l21m @ inv2.basis_minus - inv2.basis_minus)
    res["lambda_21_minus_kills"] = op_norm(l21m @ inv1.basis_plus)
    res["lambda_21_plus_fixes"] = op_norm(l21p @ inv2.basis_plus - inv2.basis_plus)
    res["lambda_21_plus_kills"] = op_norm(l21p @ inv1.basis_minus)
    res["lambda_12_minus_fixes"] = op_norm(l12m @ inv1.basis_minus - inv1.basis_minus)
    res["lambda_12_minus_kills"] = op_norm(l12m @ inv2.basis_plus)
    res["sqrt_squares_to_k"] = op_norm(m @ m - k)
    res["sqrt_conjugates"] = op_norm(s2 @ m - m @ s1)
    res["k_inverse_relation"] = op_norm(s1 @ k @ s1 - np.linalg.inv(k))
    res["k_positive_in_g1"] = herm_residual(inv1.g @ k)
    res["q_adjoint_lambda_pair"] = op_norm(
        q_adjoint(l12p, space.q) - l21p
    )
    return res


@dataclass
class BogoliubovBlocks:
    """Corner blocks of a form-preserving map against two decompositions.

    Coordinate matrices against the G-orthonormal bases of the source and
    target involutions, so adjoints are conjugate transposes.  c maps
    target-minus coordinates to target-plus ones through the map; d is the
    other natural off-diagonal ratio.  Both are computed by two independent
    formulas and the discrepancy is reported.
    """

    rpp: np.ndarray
    rpm: np.ndarray
    rmp: np.ndarray
    rmm: np.ndarray
    c: np.ndarray
    d: np.ndarray
    c_discrepancy: float
    d_discrepancy: float
    factorization_residual: float
    residuals: dict = field(default_factory=dict)


def _block_coordinates(r, inv1, inv2):
    rv_p = r @ inv1.basis_plus
    rv_m = r @ inv1.basis_minus
    rpp = inv2.coords_plus(rv_p)
    rpm = inv2.coords_plus(rv_m)
    rmp = inv2.coords_minus(rv_p)
    rmm = inv2.coords_minus(rv_m)
    return rpp, rpm, rmp, rmm


def verify_pseudo_unitary(space: KreinSpace, r, s1, s2) -> dict:
    """Residuals of the form-preservation laws of a map between two
    marked decompositions.

    The defining relations are R* S2 R = S1 and R S1 R* = S2 with the
    adjoint taken between the compatible scalar products, equivalent to
    preservation of Q.  The eight block relations are the corner-block
    identities these laws induce.
    """
    r = as_complex_matrix(r)
    inv1 = s1 if isinstance(s1, AdmissibleInvolution) else check_admissible(space, s1)
    inv2 = s2 if isinstance(s2, AdmissibleInvolution) else check_admissible(space, s2)
    radj = g_adjoint(r, inv1.g, inv2.g)
    res = {
        "q_preservation": op_norm(r.conj().T @ space.q @ r - space.q),
        "adjoint_s2_r": op_norm(radj @ inv2.s @ r - inv1.s),
        "r_s1_adjoint": op_norm(r @ inv1.s @ radj - inv2.s),
    }
    rpp, rpm, rmp, rmm = _block_coordinates(r, inv1, inv2)
    kp = inv1.k_plus
    km = inv1.k_minus
    eyep = np.eye(kp)
    eyem = np.eye(km)
    h = lambda a: a.conj().T
    # column relations (R* S2 R = S1 in corners)
    res["block_pp"] = op_norm(h(rpp) @ rpp - h(rmp) @ rmp - eyep)
    res["block_pm"] = op_norm(h(rpp) @ rpm - h(rmp) @ rmm)
    res["block_mp"] = op_norm(h(rpm) @ rpp - h(rmm) @ rmp)
    res["block_mm"] = op_norm(h(rpm) @ rpm - h(rmm) @ rmm + eyem)
    # row relations (R S1 R* = S2 in corners)
    res["block_pp_row"] = op_norm(rpp @ h(rpp) - rpm @ h(rpm) - eyep)
    res["block_pm_row"] = op_norm(rpp @ h(rmp) - rpm @ h(rmm))
    res["block_mp_row"] = op_norm(rmp @ h(rpp) - rmm @ h(rpm))
    res["block_mm_row"] = op_norm(rmp @ h(rmp) - rmm @ h(rmm) + eyem)
    return res


def bogoliubov_blocks(space: KreinSpace, r, s1, s2) -> BogoliubovBlocks:
    """Corner blocks, off-diagonal ratios, and the triangular factorization.

    Raises SingularBlockError when a diagonal corner block is singular,
    which is the breakdown of the triangular factorization.
    """
    r = as_complex_matrix(r)
    inv1 = s1 if isinstance(s1, AdmissibleInvolution) else check_admissible(space, s1)
    inv2 = s2 if isinstance(s2, AdmissibleInvolution) else check_admissible(space, s2)
    rpp, rpm, rmp, rmm = _block_coordinates(r, inv1, inv2)
    h = lambda a: a.conj().T
    for name, blk in (("plus-plus", rpp), ("minus-minus", rmm)):
        if blk.size and np.linalg.cond(blk) > 1.0 / np.finfo(float).eps ** 0.75:
            raise SingularBlockError(f"{name} corner block is numerically singular")
    # c = Rpp^{-1} Rpm and c = Rmp^H Rmm^{-H}; solve-based to avoid inverses
    c1 = np.linalg.solve(rpp, rpm)
    c2 = h(np.linalg.solve(rmm, rmp))
    # d = Rpm Rmm^{-1} and d = Rpp^{-H} Rmp^H
    d1 = np.linalg.solve(rmm.T, rpm.T).T
    d2 = np.linalg.solve(rpp.conj().T, rmp.conj().T)
    c = c1
    d = d1
    kp, km = rpp.shape[0], rmm.shape[0]
    upper = np.block([[np.eye(kp), d], [np.zeros((km, kp)), np.eye(km)]])
    lower = np.block([[np.eye(kp), np.zeros((kp, km))], [h(c), np.eye(km)]])
    mid = np.block(
        [
            [np.linalg.inv(h(rpp)), np.zeros((kp, km))],
            [np.zeros((km, kp)), rmm],
        ]
    )
    rc = np.block([[rpp, rpm], [rmp, rmm]])
    fact = op_norm(upper @ mid @ lower - rc)
    res = {
        "normal_form_pp": op_norm(h(rpp) @ rpp - np.linalg.inv(np.eye(kp) - c @ h(c))),
        "normal_form_mm": op_norm(h(rmm) @ rmm - np.linalg.inv(np.eye(km) - h(c) @ c)),
        "normal_form_pp_row": op_norm(rpp @ h(rpp) - np.linalg.inv(np.eye(kp) - d @ h(d))),
    }
    return BogoliubovBlocks(
        rpp=rpp,
        rpm=rpm,
        rmp=rmp,
        rmm=rmm,
        c=c,
        d=d,
        c_discrepancy=op_norm(c1 - c2),
        d_discrepancy=op_norm(d1 - d2),
        factorization_residual=fact,
        residuals=res,
    )
