"""
Quantum-dot molecule pulse-injection simulator.

Modules:
- core: units, constants, DeviceParams, validation, parameter files
- dynamics: S/AS density-matrix evolution during a pulse
- protocol: refill / decay cycles, staircase channels, I_sub sweeps
- accounting: per-pulse per-molecule current and electron counting
- analysis: windowed detrending, periodograms, dominant periods
- fitting: damped-cosine and simulator-in-the-loop parameter fits
- spectra: dI/dV double peak and Zeeman splitting
"""

from src.qdm.core import (
    CONSTANTS,
    ConvergenceError,
    DeviceParams,
    ParameterError,
    ParameterFileError,
    SweepSpec,
    WindowError,
    validate,
)
from src.qdm.protocol import PulseTrace, i_sub_point, sweep

__all__ = [
    "CONSTANTS",
    "ConvergenceError",
    "DeviceParams",
    "ParameterError",
    "ParameterFileError",
    "PulseTrace",
    "SweepSpec",
    "WindowError",
    "i_sub_point",
    "sweep",
    "validate",
]
