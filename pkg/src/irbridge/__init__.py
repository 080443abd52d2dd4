"""Transition machinery between diffusion bridges and generative diffusion paths."""
from ._kernels import BACKEND
from .errors import (
    AboveCritical,
    BelowCritical,
    IRBridgeError,
    NoSolution,
    NoValidSigma,
    SigmaOutOfRange,
    SourceDegenerate,
    ZeroF,
)
from .paths import BridgeParams, DdpmSchedule, PathCoefficients, ResidualSchedule, make_path
from .transition import (
    critical_timestep,
    forward_transition,
    reverse_transition,
    sigma_range,
    transition_coeffs,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "IRBridgeError",
    "AboveCritical",
    "BelowCritical",
    "NoSolution",
    "NoValidSigma",
    "SigmaOutOfRange",
    "SourceDegenerate",
    "ZeroF",
    "BridgeParams",
    "DdpmSchedule",
    "PathCoefficients",
    "ResidualSchedule",
    "make_path",
    "critical_timestep",
    "forward_transition",
    "reverse_transition",
    "sigma_range",
    "transition_coeffs",
    "__version__",
]
