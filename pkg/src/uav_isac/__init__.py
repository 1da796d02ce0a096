"""Secure UAV ISAC planner: joint per-slot transmit beamforming and UAV
trajectory optimization against a dual communication/sensing eavesdropper,
with the comparison schemes and experiment harness used to study it."""

__version__ = "0.1.0"

from .geometry import ScenarioConfig, Trajectory
from .metrics import BeamPlan, average_secrecy_rate, check_feasibility

__all__ = [
    "BeamPlan",
    "ScenarioConfig",
    "Trajectory",
    "average_secrecy_rate",
    "check_feasibility",
    "__version__",
]
