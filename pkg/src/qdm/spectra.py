"""
Synthetic dI/dV curves of the S/AS double peak and its Zeeman splitting.

Each zero-field peak at energy E becomes two Lorentzians of half weight at
E +/- g*mu_B*B/2. Bias maps to energy through E = (V - v_offset) * lever_arm.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.qdm.core import CONSTANTS, DeviceParams, ParameterError


@dataclass(frozen=True)
class PeakSet:
    centers: Tuple[float, ...]      # meV, relative to the S state
    widths: Tuple[float, ...]       # meV, Lorentzian HWHM
    amplitudes: Tuple[float, ...]
    lever_arm: float = 20.0         # meV/V
    v_offset: float = 0.0           # V

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        object.__setattr__(self, "widths", tuple(float(w) for w in self.widths))
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        if not (len(self.centers) == len(self.widths) == len(self.amplitudes)):
            raise ParameterError("centers, widths and amplitudes must have equal lengths")
        if any(not w > 0 for w in self.widths):
            raise ParameterError(f"widths must be > 0, got {self.widths}")
        if list(self.centers) != sorted(self.centers):
            raise ParameterError(f"centers must be sorted ascending, got {self.centers}")
        if not self.lever_arm > 0:
            raise ParameterError(f"lever_arm must be > 0, got {self.lever_arm}")


def peakset_from_params(params: DeviceParams, width: float = 0.15,
                        amplitude: float = 1.0, v_offset: float = 0.0) -> PeakSet:
    """S and AS peaks separated by delta_e."""
    return PeakSet(
        centers=(0.0, params.delta_e),
        widths=(width, width),
        amplitudes=(amplitude, amplitude),
        lever_arm=params.lever_arm,
        v_offset=v_offset,
    )


def zeeman_centers(peaks: PeakSet, b_field: float,
                   g_factor: Optional[float]) -> List[Tuple[float, float, float]]:
    """(center, width, amplitude) of every spin branch."""
    if b_field < 0:
        raise ParameterError(f"b_field must be >= 0, got {b_field}")
    split = 0.0
    if b_field > 0:
        if g_factor is None:
            raise ParameterError("g_factor is required for a nonzero magnetic field")
        split = 0.5 * g_factor * CONSTANTS.mu_B * b_field
    if split == 0:
        return list(zip(peaks.centers, peaks.widths, peaks.amplitudes))
    branches = []
    for center, width, amplitude in zip(peaks.centers, peaks.widths, peaks.amplitudes):
        branches.append((center - split, width, 0.5 * amplitude))
        branches.append((center + split, width, 0.5 * amplitude))
    return branches


def lorentzian(energy: np.ndarray, center: float, width: float, amplitude: float) -> np.ndarray:
    return amplitude * width ** 2 / ((energy - center) ** 2 + width ** 2)


def didv_curve(peaks: PeakSet, b_field: float, g_factor: Optional[float],
               v_grid: Sequence[float]) -> List[Tuple[float, float]]:
    """
    Differential conductance (a.u.) on a bias grid (V).

    Raises:
        ParameterError: Empty or unsorted grid, negative field, or a field
            without a g_factor
    """
    v = np.asarray(v_grid, dtype=float)
    if v.size == 0:
        raise ParameterError("bias grid is empty")
    if np.any(np.diff(v) < 0):
        raise ParameterError("bias grid must be sorted ascending")
    energy = (v - peaks.v_offset) * peaks.lever_arm
    conductance = np.zeros_like(energy)
    for center, width, amplitude in zeeman_centers(peaks, b_field, g_factor):
        conductance += lorentzian(energy, center, width, amplitude)
    return list(zip(v.tolist(), conductance.tolist()))


def count_maxima(values: Sequence[float]) -> int:
    """Number of strict interior local maxima."""
    y = np.asarray(values, dtype=float)
    if len(y) < 3:
        return 0
    return int(np.sum((y[1:-1] > y[:-2]) & (y[1:-1] > y[2:])))


def peak_spacing_to_delta_e(v_spacing: float, lever_arm: float) -> float:
    """Energy splitting (meV) from a bias spacing (V)."""
    if v_spacing < 0 or not lever_arm > 0:
        raise ParameterError(
            f"v_spacing must be >= 0 and lever_arm > 0 (got {v_spacing}, {lever_arm})"
        )
    return v_spacing * lever_arm


def bias_grid(v_min: float, v_max: float, points: int) -> np.ndarray:
    if points < 2 or not v_max > v_min:
        raise ParameterError(f"need v_max > v_min and >= 2 points (got {v_min}:{v_max}, {points})")
    return np.linspace(v_min, v_max, points)
