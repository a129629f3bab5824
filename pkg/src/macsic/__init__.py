"""Asymptotic analysis, power optimisation and simulation of soft interference cancellation for Gaussian random codes."""
__version__ = "0.1.0"

from .asymptotic import BoundKind, CodeSpec, block_error_prob, residual_fraction  # noqa: E402
from .errors import ContractError, DomainError, UnsupportedRangeError  # noqa: E402
from .evolution import PowerProfile, Trajectory, evolve  # noqa: E402

__all__ = [
    "BoundKind",
    "CodeSpec",
    "ContractError",
    "DomainError",
    "PowerProfile",
    "Trajectory",
    "UnsupportedRangeError",
    "__version__",
    "block_error_prob",
    "evolve",
    "residual_fraction",
]
