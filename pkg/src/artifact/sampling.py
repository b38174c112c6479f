"""Reproducible random forms, involutions, and form-preserving maps.

Used by the property tests and by the randomized self-checks the command
line runner performs.  Everything funnels through one numpy Generator so a
seed pins the whole sweep.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .krein import KreinSpace

__all__ = [
    "canonical_involution",
    "random_admissible_involution",
    "random_hermitian",
    "random_krein_space",
    "random_q_unitary",
]


def random_hermitian(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return scale * 0.5 * (a + a.conj().T) / np.sqrt(dim)


def random_krein_space(rng: np.random.Generator, dim: int, signature=None) -> KreinSpace:
    """Random Hermitian invertible form with a prescribed signature.

    signature defaults to an even split (extra dimension goes to +).
    Eigenvalues are kept in [0.5, 2.0] so the form is well conditioned.
    """
    if signature is None:
        signature = ((dim + 1) // 2, dim // 2)
    np_, nm = signature
    if np_ + nm != dim:
        raise ValueError("signature does not add up to dim")
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    u, _ = np.linalg.qr(a)
    d = rng.uniform(0.5, 2.0, size=dim) * np.array([1.0] * np_ + [-1.0] * nm)
    q = (u * d) @ u.conj().T
    return KreinSpace(dim=dim, q=0.5 * (q + q.conj().T))


def canonical_involution(space: KreinSpace) -> np.ndarray:
    """The involution aligned with the form's own eigendecomposition."""
    w, u = np.linalg.eigh(space.q)
    return (u * np.sign(w)) @ u.conj().T


def random_q_unitary(rng: np.random.Generator, space: KreinSpace, strength: float = 0.5) -> np.ndarray:
    """exp(-iX) with X self-adjoint for the form, hence form-preserving."""
    y = random_hermitian(rng, space.dim, scale=strength)
    x = np.linalg.solve(space.q, y)
    return sla.expm(-1j * x)


def random_admissible_involution(
    rng: np.random.Generator, space: KreinSpace, strength: float = 0.5
) -> np.ndarray:
    """Transport the canonical involution by a random form-preserving map."""
    s0 = canonical_involution(space)
    t = random_q_unitary(rng, space, strength=strength)
    return t @ s0 @ np.linalg.inv(t)
