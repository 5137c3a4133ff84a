"""Quantum-trajectory simulation of monitored fermions and entanglement scaling fits."""

from .errors import MonitoredFermionsError
from .trajectory import NoiseStream, StepSchedule, run_ensemble, steady_state_average

__all__ = [
    "MonitoredFermionsError",
    "NoiseStream",
    "StepSchedule",
    "run_ensemble",
    "steady_state_average",
]
__version__ = "0.1.0"
