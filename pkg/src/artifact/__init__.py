"""Pseudo-unitary evolutions, their propagator families, and Gaussian
quantization checks for abstract and lattice Klein-Gordon systems."""

__version__ = "0.1.0"

from .krein import (
    AdmissibleInvolution,
    BogoliubovBlocks,
    InvolutionPairAnalysis,
    KreinSpace,
    Subspace,
    analyze_pair,
    bogoliubov_blocks,
    check_admissible,
    classify_subspace,
    q_complement,
    verify_pseudo_unitary,
)

__all__ = [
    "AdmissibleInvolution",
    "BogoliubovBlocks",
    "InvolutionPairAnalysis",
    "KreinSpace",
    "Subspace",
    "__version__",
    "analyze_pair",
    "bogoliubov_blocks",
    "check_admissible",
    "classify_subspace",
    "q_complement",
    "verify_pseudo_unitary",
]
