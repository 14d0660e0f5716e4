"""CBF-constrained multi-agent herding: dynamics, control, mapping, planning."""

from shepherd._backend import COMPILED, backend_name
from shepherd.params import (
    ControllerGains,
    FlockParams,
    ParameterError,
    TrajectoryLimits,
    WorldState,
)

__version__ = "0.1.0"

__all__ = [
    "COMPILED",
    "backend_name",
    "ControllerGains",
    "FlockParams",
    "ParameterError",
    "TrajectoryLimits",
    "WorldState",
    "__version__",
]
