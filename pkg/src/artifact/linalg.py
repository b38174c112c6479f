"""Dense linear algebra helpers for indefinite-metric computations.

Everything here works on plain complex numpy arrays.  The convention
throughout the package: an "adjoint with respect to G" for a positive
Hermitian matrix G means A -> G^{-1} A^H G, and a "Q-adjoint" for an
invertible Hermitian Q means A -> Q^{-1} A^H Q.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

__all__ = [
    "as_complex_matrix",
    "canonical_phase",
    "cholesky_factor",
    "default_tol",
    "eigh_sign",
    "expm_2x2_batch",
    "g_adjoint",
    "g_orthonormalize",
    "herm_residual",
    "hermitize",
    "hermitian_sqrt_in_g",
    "op_norm",
    "projection_onto_along",
    "q_adjoint",
    "range_basis",
    "sign_via_congruence",
]


def as_complex_matrix(a) -> np.ndarray:
    """Coerce input to a square complex128 ndarray."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return m


def default_tol(dim: int, scale: float) -> float:
    """Default residual tolerance: 1e-10 scaled by dimension and magnitude."""
    return 1e-10 * dim * max(float(scale), 1.0)


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def herm_residual(a: np.ndarray) -> float:
    return op_norm(a - a.conj().T)


def op_norm(a: np.ndarray) -> float:
    """Spectral norm.  Matrices here are small, so an SVD is fine."""
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def cholesky_factor(h: np.ndarray) -> np.ndarray:
    """Upper-triangular C with h = C^H C, for Hermitian positive definite h."""
    return sla.cholesky(hermitize(h), lower=False)


def eigh_sign(t: np.ndarray) -> tuple[np.ndarray, float]:
    """Sign function of a Hermitian matrix, plus its spectral gap at zero.

    Returns (sign(t), min |eigenvalue|).  The caller decides whether the
    gap is large enough for the sign to be trustworthy.
    """
    w, u = np.linalg.eigh(hermitize(t))
    gap = float(np.min(np.abs(w)))
    s = (u * np.sign(w)) @ u.conj().T
    return s, gap


def sign_via_congruence(b: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, float]:
    """Sign of a matrix b that is Hermitian-positive after multiplication.

    h must be Hermitian positive definite with h = q b for some invertible
    Hermitian q; then b is similar to a Hermitian matrix via the Cholesky
    factor of h and the sign is pulled back through that similarity.
    Returns (sign(b), min |eigenvalue| of the similar Hermitian matrix).
    """
    c = cholesky_factor(h)
    # b = h^{-1}-ish similarity: T := C b C^{-1} is Hermitian when h = q b.
    t = c @ sla.solve_triangular(c, b.T, lower=False, trans="T").T
    t = hermitize(t)
    s_t, gap = eigh_sign(t)
    s = sla.solve_triangular(c, s_t @ c, lower=False)
    return s, gap


def hermitian_sqrt_in_g(k: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Square root of k through the scalar product defined by g.

    g is Hermitian positive definite and g k is Hermitian with positive
    spectrum; the root is taken on the Hermitian matrix C k C^{-1} where
    g = C^H C, then pulled back.  The result is again g-positive.
    """
    c = cholesky_factor(g)
    t = c @ sla.solve_triangular(c, k.T, lower=False, trans="T").T
    t = hermitize(t)
    w, u = np.linalg.eigh(t)
    if np.min(w) <= 0:
        raise ValueError(
            f"matrix is not positive in the given scalar product "
            f"(min eigenvalue {np.min(w):.3e})"
        )
    rt = (u * np.sqrt(w)) @ u.conj().T
    return sla.solve_triangular(c, rt @ c, lower=False)


def g_adjoint(a: np.ndarray, g_dom: np.ndarray, g_cod: np.ndarray | None = None) -> np.ndarray:
    """Adjoint of a : (W, g_dom) -> (W, g_cod) for positive metrics g."""
    if g_cod is None:
        g_cod = g_dom
    return np.linalg.solve(g_dom, a.conj().T @ g_cod)


def q_adjoint(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Adjoint with respect to an indefinite Hermitian form q."""
    return np.linalg.solve(q, a.conj().T @ q)


def canonical_phase(v: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real positive.

    Fixes the residual U(1) freedom of basis columns so results are
    reproducible across runs.
    """
    v = np.array(v, dtype=np.complex128, copy=True)
    for j in range(v.shape[1]):
        i = int(np.argmax(np.abs(v[:, j])))
        z = v[i, j]
        if np.abs(z) > 0:
            v[:, j] *= np.conj(z) / np.abs(z)
    return v


def range_basis(a: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Orthonormal basis (standard inner product) of the column space of a."""
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s.size == 0:
        return u[:, :0]
    cut = (max(a.shape) * np.finfo(float).eps * s[0]) if tol is None else tol
    r = int(np.sum(s > cut))
    return canonical_phase(u[:, :r])


def g_orthonormalize(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Make the columns of v orthonormal in the scalar product <x, g y>."""
    m = hermitize(v.conj().T @ g @ v)
    u = sla.cholesky(m, lower=False)
    # v' = v u^{-1}, i.e. u^T (v')^T = v^T with u^T lower triangular
    return sla.solve_triangular(u.T, v.T, lower=True, trans="N").T


def projection_onto_along(target: np.ndarray, other: np.ndarray) -> tuple[np.ndarray, float]:
    """Projection onto span(target) along span(other), by a stacked solve.

    The two column families must jointly span the full space.  Returns the
    projection matrix and the condition number of the stacked system, which
    the caller can use for diagnostics.  No explicit inverse formula is used;
    conditioning of the solve is the honest measure of complementarity.
    """
    dim = target.shape[0]
    k = target.shape[1]
    stacked = np.hstack([target, other])
    if stacked.shape != (dim, dim):
        raise ValueError(
            f"subspace dimensions {target.shape[1]} + {other.shape[1]} "
            f"do not add up to the space dimension {dim}"
        )
    cond = float(np.linalg.cond(stacked))
    coeff = np.linalg.solve(stacked, np.eye(dim, dtype=np.complex128))
    return target @ coeff[:k, :], cond


def expm_2x2_batch(m: np.ndarray) -> np.ndarray:
    """Closed-form matrix exponential for a (..., 2, 2) stack.

    Uses exp(m) = e^mu (cosh(d) I + sinh(d)/d (m - mu I)) with
    mu = tr(m)/2 and d^2 = mu^2 - det(m); the sinh(d)/d factor is evaluated
    through a series near d = 0 to stay accurate for tiny steps.
    """
    m = np.asarray(m, dtype=np.complex128)
    mu = 0.5 * (m[..., 0, 0] + m[..., 1, 1])
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    d2 = mu * mu - det
    d = np.sqrt(d2)
    cosh = np.cosh(d)
    small = np.abs(d) < 1e-6
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(small, 1.0 + d2 / 6.0 + d2 * d2 / 120.0, np.sinh(d) / np.where(small, 1.0, d))
    eye = np.eye(2, dtype=np.complex128)
    out = cosh[..., None, None] * eye + ratio[..., None, None] * (m - mu[..., None, None] * eye)
    return np.exp(mu)[..., None, None] * out
