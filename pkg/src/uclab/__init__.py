"""Numerical unique continuation: three-ball fits, propagation certificates,
observability constants and boundary spectral data on grid domains."""

from .exceptions import (
    BallEscapesDomainError,
    CertificateViolation,
    ChainInfeasibleError,
    ConvergenceError,
    DisconnectedDomainError,
    MassNearBoundaryError,
    SigmaDegenerateError,
    UCLabError,
    ValidationError,
    ZeroBallError,
)
from .geometry import GridDomain, build_domain, interior_shrink
from .elliptic import DiscreteField, assemble, solve_dirichlet
from .coefficients import make_coefficients, make_metric

__version__ = "0.1.0"

__all__ = [
    "BallEscapesDomainError",
    "CertificateViolation",
    "ChainInfeasibleError",
    "ConvergenceError",
    "DisconnectedDomainError",
    "DiscreteField",
    "GridDomain",
    "MassNearBoundaryError",
    "SigmaDegenerateError",
    "UCLabError",
    "ValidationError",
    "ZeroBallError",
    "assemble",
    "build_domain",
    "interior_shrink",
    "make_coefficients",
    "make_metric",
    "solve_dirichlet",
    "__version__",
]
