"""Energy-efficiency analysis of buffer-aided relaying with adaptive modulation and opportunistic spectrum access."""

from .config import load_config
from .errors import (
    ComparabilityError,
    ConfigError,
    InfeasibleDelayError,
    InvalidParameterError,
    NumericError,
    RelayEEError,
)
from .metrics import Model, ModelOptions, evaluate, evaluate_direct, evaluate_relay
from .optimizer import eep_boundaries, optimize_direct, optimize_relay, switch_decision

__version__ = "0.1.0"

__all__ = [
    "ComparabilityError",
    "ConfigError",
    "InfeasibleDelayError",
    "InvalidParameterError",
    "Model",
    "ModelOptions",
    "NumericError",
    "RelayEEError",
    "eep_boundaries",
    "evaluate",
    "evaluate_direct",
    "evaluate_relay",
    "load_config",
    "optimize_direct",
    "optimize_relay",
    "switch_decision",
]
