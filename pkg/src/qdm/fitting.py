"""
Parameter extraction from pulse-width traces.

Two fits:
- fit_damped_cosine: y = B + A exp(-t/t2) cos(2 pi t/P + phi) on a detrended
  window. Period and t2 are fitted as logarithms so they stay positive.
  Trust-region least squares with a central-difference Jacobian; simplex
  restarts from shifted phases only when that fit fails or leaves more than
  half the signal unexplained.
- fit_device_params: simulator-in-the-loop RMS minimization over a subset of
  DeviceParams, bounded Nelder-Mead on a unit box with 5 deterministic starts.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares, minimize

from src.qdm.analysis import detrend_series, dominant_period, periodogram
from src.qdm.core import (
    ConvergenceError,
    DeviceParams,
    ParameterError,
    WindowError,
    energy_from_period,
    validate,
)
from src.qdm.protocol import PulseTrace, simulate_points

logger = logging.getLogger(__name__)

COSINE_RESTART_PHASES = (0.5 * math.pi, math.pi, -0.5 * math.pi)
DEVICE_STARTS = 5
DEFAULT_FIT_SEED = 42
INVALID_PENALTY = 1e6
SIMPLEX_STEP = 0.005

FREE_PARAMETERS = ("delta_e", "gamma_s", "gamma_as", "gamma_phi0", "eta_inject", "leak_slope")

DEFAULT_BOUNDS: Dict[str, Tuple[float, float]] = {
    "delta_e": (0.5, 2.0),
    "gamma_s": (1e-8, 1e-4),
    "gamma_as": (1e-8, 1e-4),
    "gamma_phi0": (1e-5, 1.0),
    "eta_inject": (0.01, 1.0),
    "leak_slope": (1e-3, 10.0),
}


# ==================== Damped cosine ====================

@dataclass(frozen=True)
class DampedCosineModel:
    amplitude: float  # pA
    period: float     # ps
    phase: float      # rad
    t2: float         # ps
    baseline: float = 0.0

    def __post_init__(self):
        if not self.period > 0:
            raise ParameterError(f"period must be > 0, got {self.period}")
        if not self.t2 > 0:
            raise ParameterError(f"t2 must be > 0, got {self.t2}")
        if not self.amplitude >= 0:
            raise ParameterError(f"amplitude must be >= 0, got {self.amplitude}")

    def to_vector(self) -> np.ndarray:
        return np.array([self.amplitude, math.log(self.period), self.phase,
                         math.log(self.t2), self.baseline])

    @property
    def energy(self) -> float:
        return energy_from_period(self.period)


@dataclass(frozen=True)
class FitResult:
    model: DampedCosineModel
    residual_rms: float
    iterations: int
    converged: bool
    covariance_diag: Tuple[float, ...]
    restarts: int = 0


def _evaluate(theta: np.ndarray, t: np.ndarray) -> np.ndarray:
    amplitude, log_period, phase, log_t2, baseline = theta
    return baseline + amplitude * np.exp(-t / math.exp(log_t2)) * np.cos(
        2.0 * math.pi * t / math.exp(log_period) + phase)


def damped_cosine(t: Sequence[float], model: DampedCosineModel) -> np.ndarray:
    """Evaluate the model at times t (ps)."""
    return _evaluate(model.to_vector(), np.asarray(t, dtype=float))


def numeric_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: Sequence[float],
                     rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    columns = []
    for i in range(len(x)):
        h = rel_step * max(1.0, abs(x[i]))
        up = x.copy()
        down = x.copy()
        up[i] += h
        down[i] -= h
        columns.append((np.asarray(fun(up)) - np.asarray(fun(down))) / (2.0 * h))
    return np.column_stack(columns)


def _wrap_phase(phase: float) -> float:
    wrapped = math.remainder(phase, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


def _initial_model(y: np.ndarray, grid_step: float) -> DampedCosineModel:
    n = len(y)
    estimate = dominant_period(periodogram(y, grid_step), threshold=0.0)
    std = float(np.std(y))
    period = estimate.period if (estimate.period and std > 0) else n * grid_step / 4.0
    return DampedCosineModel(
        amplitude=std * math.sqrt(2.0),
        period=period,
        phase=0.0,
        t2=n * grid_step,
        baseline=float(np.mean(y)),
    )


def _least_squares(residual, theta0: np.ndarray):
    return least_squares(
        residual,
        theta0,
        jac=lambda th: numeric_jacobian(residual, th),
        method="trf",
        ftol=1e-10,
        xtol=1e-12,
        gtol=1e-9,
        x_scale="jac",
        max_nfev=2000,
    )


def fit_damped_cosine(series: Sequence[float], grid_step: float,
                      init: Optional[DampedCosineModel] = None) -> FitResult:
    """
    Least-squares damped-cosine fit of a detrended window.

    Args:
        series: Uniformly sampled values; sample i sits at t = i * grid_step
        grid_step: Sample spacing (ps)
        init: Starting model; self-initialized from the periodogram when None

    Returns:
        FitResult; failure to converge is reported in it, not raised

    Raises:
        WindowError: If the series has fewer than 16 samples
    """
    y = np.asarray(series, dtype=float)
    if len(y) < 16:
        raise WindowError(f"series too short for a fit ({len(y)} < 16)")
    if not grid_step > 0:
        raise ParameterError(f"grid_step must be > 0, got {grid_step}")

    t = np.arange(len(y)) * grid_step
    model0 = init or _initial_model(y, grid_step)

    def residual(theta):
        return _evaluate(theta, t) - y

    best = _least_squares(residual, model0.to_vector())
    iterations = int(best.nfev)
    restarts = 0

    std = float(np.std(y))
    rms = math.sqrt(2.0 * best.cost / len(y))
    if best.status <= 0 or rms > 0.5 * std:
        logger.debug("Cosine fit rms %.3g vs std %.3g (status %d); restarting",
                     rms, std, best.status)

        def cost(theta):
            r = residual(theta)
            return 0.5 * float(r @ r)

        for offset in COSINE_RESTART_PHASES:
            start = best.x.copy()
            start[2] += offset
            simplex = minimize(cost, start, method="Nelder-Mead",
                               options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
            polished = _least_squares(residual, simplex.x)
            iterations += int(simplex.nfev) + int(polished.nfev)
            restarts += 1
            if polished.cost < best.cost:
                best = polished

    theta = best.x.copy()
    if theta[0] < 0:
        theta[0] = -theta[0]
        theta[2] += math.pi
    theta[2] = _wrap_phase(theta[2])

    model = DampedCosineModel(
        amplitude=float(theta[0]),
        period=math.exp(theta[1]),
        phase=float(theta[2]),
        t2=math.exp(theta[3]),
        baseline=float(theta[4]),
    )
    rms = math.sqrt(2.0 * best.cost / len(y))
    return FitResult(
        model=model,
        residual_rms=rms,
        iterations=iterations,
        converged=bool(best.status > 0),
        covariance_diag=_covariance_diag(best, model, len(y)),
        restarts=restarts,
    )


def _covariance_diag(result, model: DampedCosineModel, n: int) -> Tuple[float, ...]:
    dof = max(1, n - 5)
    s2 = 2.0 * result.cost / dof
    J = np.asarray(result.jac)
    cov = s2 * np.linalg.pinv(J.T @ J)
    var = np.clip(np.diag(cov), 0.0, None)
    # Log-space variances mapped back to period and t2
    return (
        float(var[0]),
        float(var[1] * model.period ** 2),
        float(var[2]),
        float(var[3] * model.t2 ** 2),
        float(var[4]),
    )


# ==================== Device parameters ====================

def parse_bounds(specs: Iterable[str]) -> Dict[str, Tuple[float, float]]:
    """Parse ``name=lo:hi`` items."""
    bounds = {}
    for item in specs:
        if "=" not in item or ":" not in item:
            raise ParameterError(f"expected name=lo:hi, got '{item}'")
        name, interval = item.split("=", 1)
        lo, hi = interval.split(":", 1)
        try:
            bounds[name.strip()] = (float(lo), float(hi))
        except ValueError:
            raise ParameterError(f"invalid bounds for '{name.strip()}': '{interval}'")
    return bounds


class _UnitBox:
    """Maps free parameters to [0, 1]; rates are mapped logarithmically."""

    def __init__(self, names: Sequence[str], bounds: Mapping[str, Tuple[float, float]]):
        self.names = list(names)
        self.bounds = [bounds[name] for name in self.names]
        self.logs = [name.startswith("gamma_") for name in self.names]

    def to_unit(self, params: DeviceParams) -> np.ndarray:
        u = []
        for name, (lo, hi), use_log in zip(self.names, self.bounds, self.logs):
            value = getattr(params, name)
            if use_log:
                u.append((math.log(value) - math.log(lo)) / (math.log(hi) - math.log(lo)))
            else:
                u.append((value - lo) / (hi - lo))
        return np.array(u)

    def to_params(self, u: Sequence[float], base: DeviceParams) -> DeviceParams:
        values = {}
        for x, name, (lo, hi), use_log in zip(u, self.names, self.bounds, self.logs):
            x = min(1.0, max(0.0, float(x)))
            if use_log:
                values[name] = math.exp(math.log(lo) + x * (math.log(hi) - math.log(lo)))
            else:
                values[name] = lo + x * (hi - lo)
        return replace(base, **values)


def _check_device_inputs(free: Sequence[str], bounds: Mapping[str, Tuple[float, float]],
                         init: DeviceParams) -> Dict[str, Tuple[float, float]]:
    resolved = {}
    for name in free:
        if name not in FREE_PARAMETERS:
            raise ParameterError(
                f"'{name}' cannot be fitted; choose from {', '.join(FREE_PARAMETERS)}"
            )
        lo, hi = bounds.get(name, DEFAULT_BOUNDS[name])
        if not (math.isfinite(lo) and math.isfinite(hi) and 0 < lo < hi):
            raise ParameterError(f"bounds for {name} must satisfy 0 < lo < hi (got {lo}:{hi})")
        value = getattr(init, name)
        if not lo <= value <= hi:
            raise ParameterError(f"initial {name} = {value} outside bounds [{lo}, {hi}]")
        resolved[name] = (lo, hi)
    return resolved


def _rms(params: DeviceParams, dt: np.ndarray, observed: np.ndarray) -> float:
    if validate(params):
        return INVALID_PENALTY
    try:
        simulated = simulate_points(params, dt)
    except (ParameterError, ConvergenceError) as e:
        logger.debug("Objective penalty at %s: %s", params, e)
        return INVALID_PENALTY
    return float(np.sqrt(np.mean((simulated - observed) ** 2)))


def spectral_delta_e(trace: PulseTrace) -> Optional[float]:
    """Splitting implied by the dominant period of the whole detrended trace."""
    dt, current = trace.arrays()
    try:
        residual = detrend_series(dt, current)
        estimate = dominant_period(periodogram(residual, trace.step), threshold=0.0)
    except (WindowError, ParameterError):
        return None
    return estimate.energy


def _start_points(box: _UnitBox, init: DeviceParams, trace: PulseTrace,
                  starts: int, seed: int) -> List[np.ndarray]:
    points = [box.to_unit(init)]
    rng = np.random.default_rng(seed)
    if "delta_e" in box.names and starts > 1:
        seeded = spectral_delta_e(trace)
        if seeded is not None:
            lo, hi = box.bounds[box.names.index("delta_e")]
            value = min(hi, max(lo, seeded))
            point = points[0].copy()
            point[box.names.index("delta_e")] = (value - lo) / (hi - lo)
            points.append(point)
            logger.debug("Spectral delta_e seed %.6g meV", value)
    while len(points) < starts:
        points.append(rng.uniform(0.0, 1.0, len(box.names)))
    return points


def _initial_simplex(x0: np.ndarray) -> np.ndarray:
    simplex = [x0]
    for i in range(len(x0)):
        vertex = x0.copy()
        vertex[i] += SIMPLEX_STEP if vertex[i] + SIMPLEX_STEP <= 1.0 else -SIMPLEX_STEP
        simplex.append(vertex)
    return np.array(simplex)


def fit_device_params(trace: PulseTrace, free: Sequence[str],
                      bounds: Optional[Mapping[str, Tuple[float, float]]] = None,
                      init: Optional[DeviceParams] = None,
                      starts: int = DEVICE_STARTS,
                      seed: int = DEFAULT_FIT_SEED) -> Tuple[DeviceParams, float]:
    """
    Fit DeviceParams to a trace by matching the simulated I_sub.

    Args:
        trace: Target trace
        free: Names to fit (subset of FREE_PARAMETERS)
        bounds: name -> (lo, hi); DEFAULT_BOUNDS for missing names
        init: Starting parameters (also supplies every fixed value)
        starts: Number of multi-starts; start 0 is init, start 1 a spectral
            delta_e seed when delta_e is free, the rest seeded uniform draws
        seed: Seed for the uniform draws

    Returns:
        (best params, RMS residual in pA); ties go to the earliest start

    Raises:
        ParameterError: Unknown free name, bad bounds or init outside bounds
    """
    init = init or trace.params_snapshot
    free = list(dict.fromkeys(free))
    resolved = _check_device_inputs(free, bounds or {}, init)
    dt, observed = trace.arrays()

    if not free:
        return init, _rms(init, dt, observed)

    box = _UnitBox(free, resolved)

    def objective(u):
        return _rms(box.to_params(u, init), dt, observed)

    best_u = None
    best_rms = math.inf
    for index, x0 in enumerate(_start_points(box, init, trace, starts, seed)):
        result = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            bounds=[(0.0, 1.0)] * len(free),
            options={
                "initial_simplex": _initial_simplex(x0),
                "xatol": 1e-7,
                "fatol": 1e-12,
                "maxiter": 400 * len(free),
            },
        )
        rms = float(result.fun)
        logger.debug("Start %d: rms %.6g after %d evaluations", index, rms, result.nfev)
        if rms < best_rms:
            best_u, best_rms = result.x, rms

    fitted = box.to_params(best_u, init)
    logger.info("Device fit of %s: rms %.6g pA", ", ".join(free), best_rms)
    return fitted, best_rms

