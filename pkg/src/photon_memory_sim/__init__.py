"""Single-photon storage in a cavity-coupled three-level atom.

Mode-resolved propagation, analytic control pulses, an input-output
cross-check model and piecewise-constant optimal control.
"""

from .core import Basis, Level, SystemParams, mhz
from .envelopes import FlatEnvelope, SampledEnvelope, SechEnvelope
from .grape import OptimizationReport, evaluate_with_losses, min_coherence_time, optimize_storage
from .kernels import BACKEND
from .propagator import QuantumState, SimulationRecord, propagate, simulate
from .pulses import (ControlPulse, PiecewisePulse, efficiency_bounds, omega_D, omega_F, omega_G,
                     omega_X, omega_X_retr, time_reverse)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Basis", "ControlPulse", "FlatEnvelope", "Level", "OptimizationReport",
    "PiecewisePulse", "QuantumState", "SampledEnvelope", "SechEnvelope", "SimulationRecord",
    "SystemParams", "efficiency_bounds", "evaluate_with_losses", "mhz", "min_coherence_time",
    "omega_D", "omega_F", "omega_G", "omega_X", "omega_X_retr", "optimize_storage", "propagate",
    "simulate", "time_reverse",
]
