"""viscmm: saddle-point search on finite-dimensional energies by the viscosity
min-max route: width curves over a regularisation parameter, entropy-condition
selection of that parameter, near-critical localisation, Morse data, sweepout
surgery for index bounds, and compactly supported tilts for degenerate points.
"""

from .core import (
    SIGMA_DOMAIN_MAX,
    CriticalPointRecord,
    DimensionMismatchError,
    DomainError,
    EvaluationError,
    FunctionalHandle,
    ToleranceProfile,
    ViscmmError,
    ViscousFamily,
    as_point,
    entropy_bound,
    entropy_residual,
    evaluate_viscous,
    grad_check,
    hessian_check,
)

__version__ = "0.1.0"

__all__ = [
    "SIGMA_DOMAIN_MAX",
    "CriticalPointRecord",
    "DimensionMismatchError",
    "DomainError",
    "EvaluationError",
    "FunctionalHandle",
    "ToleranceProfile",
    "ViscmmError",
    "ViscousFamily",
    "as_point",
    "entropy_bound",
    "entropy_residual",
    "evaluate_viscous",
    "grad_check",
    "hessian_check",
    "__version__",
]
