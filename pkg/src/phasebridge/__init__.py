"""phasebridge: hardware-free testbed for real-time signal phase control.

A virtual NTCIP-style signal controller, the middleware that converts agent
actions into verified phase commands, and a closed-loop traffic harness —
runnable against a real UDP socket with wall-clock timing or entirely
in-process on a simulated clock.
"""
from .errors import (
    ActionError,
    ConfigError,
    ConflictError,
    EncodeError,
    PhaseBridgeError,
    SequenceError,
    StateError,
    TransportSendError,
)
from .model import (
    Action,
    ActionKind,
    Color,
    PhasePair,
    PhaseTiming,
    RingBarrierConfig,
    UnifiedCommand,
    convert_action,
    enumerate_admissible_pairs,
    governing_timing,
    is_compatible,
    map_duration,
    next_pair,
    standard_eight_phase,
)
from .middleware import (
    ManagerMode,
    MiddlewareConfig,
    PhaseManager,
    RecoverResult,
    SubmitResult,
    SubmitStatus,
    TimeoutCause,
)
from .controller import FaultMode, SignalControllerCore, ControllerServer
from .configio import AppConfig, load_app_config
from .sim import AGENTS, ClockMode, RunLoop, ScenarioConfig, TrafficModel
from .runner import RunResult, RunSpec, execute_run

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ActionError",
    "ActionKind",
    "AGENTS",
    "AppConfig",
    "ClockMode",
    "Color",
    "ConfigError",
    "ConflictError",
    "ControllerServer",
    "EncodeError",
    "FaultMode",
    "ManagerMode",
    "MiddlewareConfig",
    "PhaseBridgeError",
    "PhaseManager",
    "PhasePair",
    "PhaseTiming",
    "RecoverResult",
    "RingBarrierConfig",
    "RunLoop",
    "RunResult",
    "RunSpec",
    "ScenarioConfig",
    "SequenceError",
    "SignalControllerCore",
    "StateError",
    "SubmitResult",
    "SubmitStatus",
    "TimeoutCause",
    "TrafficModel",
    "TransportSendError",
    "UnifiedCommand",
    "convert_action",
    "enumerate_admissible_pairs",
    "execute_run",
    "governing_timing",
    "is_compatible",
    "load_app_config",
    "map_duration",
    "next_pair",
    "standard_eight_phase",
    "__version__",
]
