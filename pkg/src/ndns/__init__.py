"""Nonlinear displaced number states: construction, oracle checks and diagnostics."""

__version__ = "0.1.0"

from .errors import NDNSError, TruncationError, ValidationError
from .deformation import NonlinearityFunction, parse_nonlinearity
from .states import FockVector, StateSpec, TruncationPolicy, build_state
from .observables import mandel_q, wigner_grid, wigner_point

__all__ = [
    "__version__",
    "NDNSError",
    "TruncationError",
    "ValidationError",
    "NonlinearityFunction",
    "parse_nonlinearity",
    "FockVector",
    "StateSpec",
    "TruncationPolicy",
    "build_state",
    "mandel_q",
    "wigner_grid",
    "wigner_point",
]
