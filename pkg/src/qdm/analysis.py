"""
Windowed oscillation analysis of a pulse-width trace.

Pipeline per window: select samples with dt_lo < dt < dt_hi, remove a
quadratic background, take a zero-padded periodogram and look for a
dominant period whose peak stands out of the spectrum's noise floor.

Spectrum normalization: magnitudes are 2|F_k|/N, so a cosine of amplitude A
shows a peak of about A. Spectrum.power is the total non-DC power
(2*sum|F_k|^2 + |F_nyq|^2)/M over the M padded bins, which equals N times
the series variance.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from src.qdm.core import ParameterError, WindowError, energy_from_period
from src.qdm.protocol import PulseTrace

logger = logging.getLogger(__name__)

PAD_FACTOR = 16
MIN_SERIES_LENGTH = 16
MIN_WINDOW_STEPS = 10
EXCLUDED_PEAK_BINS = 3
RESOLUTION_RATIO = 1e-8
DEFAULT_THRESHOLD = 4.0


@dataclass(frozen=True)
class Window:
    dt_lo: float
    dt_hi: float

    def __post_init__(self):
        if not self.dt_hi > self.dt_lo:
            raise WindowError(f"window upper bound must exceed lower ({self.dt_lo}:{self.dt_hi})")

    @property
    def length(self) -> float:
        return self.dt_hi - self.dt_lo

    def label(self) -> str:
        return f"{self.dt_lo:g}-{self.dt_hi:g}"

    def select(self, trace: PulseTrace) -> np.ndarray:
        """Indices of samples strictly inside the window."""
        dt, _ = trace.arrays()
        if len(dt) < 2:
            raise WindowError("trace has fewer than two samples")
        step = trace.step
        tol = 1e-9 * max(1.0, step)
        if self.dt_lo < dt[0] - tol or self.dt_hi > dt[-1] + tol:
            raise WindowError(
                f"window {self.label()} outside trace bounds {dt[0]:g}..{dt[-1]:g}"
            )
        if self.length < MIN_WINDOW_STEPS * step - tol:
            raise WindowError(
                f"window {self.label()} shorter than {MIN_WINDOW_STEPS} grid steps ({step:g} ps)"
            )
        return np.nonzero((dt > self.dt_lo + tol) & (dt < self.dt_hi - tol))[0]


@dataclass(frozen=True, eq=False)
class Spectrum:
    periods: np.ndarray
    magnitudes: np.ndarray
    noise_floor: float
    grid_step: float
    n_samples: int
    resolution_floor: float = 0.0
    power: float = 0.0

    @property
    def window_length(self) -> float:
        return self.n_samples * self.grid_step


@dataclass(frozen=True)
class PeriodEstimate:
    period: Optional[float]
    energy: Optional[float]
    significance: float
    ok: bool
    window: Optional[Window] = None
    error: Optional[str] = None
    spectrum: Optional[Spectrum] = field(default=None, compare=False, repr=False)


# ==================== Background ====================

def detrend_series(x: Sequence[float], y: Sequence[float], degree: int = 2) -> np.ndarray:
    """Residual of a least-squares polynomial fit of y(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ParameterError(f"x and y lengths differ ({len(x)} vs {len(y)})")
    if len(x) <= degree:
        raise WindowError(f"need more than {degree} samples to detrend, got {len(x)}")
    # Centered and scaled abscissa keeps the normal equations well conditioned
    half = 0.5 * (x[-1] - x[0]) or 1.0
    u = (x - 0.5 * (x[0] + x[-1])) / half
    coeffs = np.polyfit(u, y, degree)
    return y - np.polyval(coeffs, u)


def detrend(trace: PulseTrace, window: Window) -> np.ndarray:
    """Oscillating part of I_sub inside a window (quadratic background removed)."""
    idx = window.select(trace)
    dt, current = trace.arrays()
    return detrend_series(dt[idx], current[idx])


# ==================== Spectrum ====================

def periodogram(series: Sequence[float], grid_step: float,
                reference_scale: float = 0.0) -> Spectrum:
    """
    Zero-padded magnitude spectrum on a period axis.

    Args:
        series: Uniformly sampled values (typically detrend output)
        grid_step: Sample spacing (ps)
        reference_scale: Magnitude of the raw signal; 1e-8 of it sets the
            resolution floor below which peaks are indistinguishable from
            the simulator's numerical resolution

    Raises:
        WindowError: If the series has fewer than 16 samples
    """
    y = np.asarray(series, dtype=float)
    n = len(y)
    if n < MIN_SERIES_LENGTH:
        raise WindowError(f"series too short for a periodogram ({n} < {MIN_SERIES_LENGTH})")
    if not grid_step > 0:
        raise ParameterError(f"grid_step must be > 0, got {grid_step}")

    y = y - y.mean()
    m = PAD_FACTOR * n
    F = np.fft.rfft(y, m)
    power = (2.0 * np.sum(np.abs(F[1:m // 2]) ** 2) + np.abs(F[m // 2]) ** 2) / m

    # Bins PAD_FACTOR.. cover periods from the series length down to Nyquist
    k = np.arange(PAD_FACTOR, m // 2 + 1)
    periods = m * grid_step / k
    magnitudes = 2.0 * np.abs(F[k]) / n

    ordered = np.sort(magnitudes)
    kept = ordered[:-EXCLUDED_PEAK_BINS] if len(ordered) > EXCLUDED_PEAK_BINS else ordered
    noise_floor = float(np.median(kept))

    return Spectrum(
        periods=periods,
        magnitudes=magnitudes,
        noise_floor=noise_floor,
        grid_step=float(grid_step),
        n_samples=n,
        resolution_floor=RESOLUTION_RATIO * abs(reference_scale),
        power=float(power),
    )


def dominant_period(spectrum: Spectrum, threshold: float = DEFAULT_THRESHOLD) -> PeriodEstimate:
    """
    Largest peak with period in [2*step, window/3], tested against the noise floor.

    A missing peak is a result (ok=False, period and energy None), not an error.
    """
    lo = 2.0 * spectrum.grid_step
    hi = spectrum.window_length / 3.0
    band = (spectrum.periods >= lo - 1e-12) & (spectrum.periods <= hi + 1e-12)
    if not np.any(band):
        return PeriodEstimate(period=None, energy=None, significance=0.0, ok=False,
                              spectrum=spectrum)

    candidates = np.nonzero(band)[0]
    best = candidates[int(np.argmax(spectrum.magnitudes[candidates]))]
    peak = float(spectrum.magnitudes[best])
    floor = max(spectrum.noise_floor, spectrum.resolution_floor)
    if floor > 0:
        significance = peak / floor
    else:
        significance = float("inf") if peak > 0 else 0.0

    ok = significance >= threshold
    if not ok:
        return PeriodEstimate(period=None, energy=None, significance=significance, ok=False,
                              spectrum=spectrum)
    period = float(spectrum.periods[best])
    return PeriodEstimate(period=period, energy=energy_from_period(period),
                          significance=significance, ok=True, spectrum=spectrum)


def analyze_window(trace: PulseTrace, window: Window,
                   threshold: float = DEFAULT_THRESHOLD) -> PeriodEstimate:
    idx = window.select(trace)
    dt, current = trace.arrays()
    residual = detrend_series(dt[idx], current[idx])
    reference = float(np.max(np.abs(current[idx]))) if len(idx) else 0.0
    spectrum = periodogram(residual, trace.step, reference_scale=reference)
    estimate = dominant_period(spectrum, threshold)
    return PeriodEstimate(period=estimate.period, energy=estimate.energy,
                          significance=estimate.significance, ok=estimate.ok,
                          window=window, spectrum=spectrum)


def analyze_windows(trace: PulseTrace, windows: Sequence[Window],
                    threshold: float = DEFAULT_THRESHOLD) -> List[PeriodEstimate]:
    """
    Run the window pipeline over each window.

    A failing window yields ok=False with its error message; the others are
    still analyzed.
    """
    results = []
    for window in windows:
        try:
            results.append(analyze_window(trace, window, threshold))
        except (WindowError, ParameterError) as e:
            logger.warning("Window %s skipped: %s", window.label(), e)
            results.append(PeriodEstimate(period=None, energy=None, significance=0.0,
                                          ok=False, window=window, error=str(e)))
    return results


# ==================== Trace helpers ====================

def moving_mean(values: Sequence[float], width: int = 10) -> np.ndarray:
    """Trailing mean over the last `width` samples (shorter at the start)."""
    if width < 1:
        raise ParameterError(f"width must be >= 1, got {width}")
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return v
    csum = np.concatenate(([0.0], np.cumsum(v)))
    idx = np.arange(1, len(v) + 1)
    start = np.maximum(0, idx - width)
    return (csum[idx] - csum[start]) / (idx - start)


def plateau_levels(trace: PulseTrace, at: Sequence[float], width: float = 10.0) -> List[float]:
    """Mean current over at - width < dt <= at for each requested pulse width."""
    dt, current = trace.arrays()
    tol = 1e-9 * max(1.0, trace.step)
    levels = []
    for point in at:
        mask = (dt > point - width + tol) & (dt <= point + tol)
        if not np.any(mask):
            raise WindowError(f"no samples in plateau window ending at {point:g} ps")
        levels.append(float(current[mask].mean()))
    return levels


def derivative(trace: PulseTrace) -> np.ndarray:
    """dI_sub/d(dt) in pA/ps (central differences, one-sided at the ends)."""
    dt, current = trace.arrays()
    if len(dt) < 2:
        raise WindowError("derivative needs at least two samples")
    return np.gradient(current, trace.step)
