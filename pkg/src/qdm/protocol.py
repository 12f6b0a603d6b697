"""
Pulse-train experiment engine.

Each repetition period of length t_rep is one cycle:

1. Refill: an empty molecule channel is injected with probability eta_inject.
   The fresh electron evolves coherently for the channel's evolution time and
   is then frozen into the slow (S) or fast (AS) decay channel. Occupied
   channels are blocked and keep their populations.
2. Inter-pulse: over t_rep - dt the classical rates act:
   S -> substrate (gamma_s), AS -> substrate (gamma_as), AS -> S (gamma_ph).

The DC substrate current is the steady per-cycle collected charge of every
staircase channel, scaled by e/t_rep, the molecule count and the amplifier
sensitivity, plus a linear leak ramp beyond leak_threshold.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.qdm.core import (
    CONSTANTS,
    ConvergenceError,
    DeviceParams,
    ParameterError,
    SweepSpec,
    dephasing_rate,
    molecules_in_area,
    validate,
)
from src.qdm.dynamics import EvolutionSpec, evolve_pulse, injected_state, localized_population

logger = logging.getLogger(__name__)

FIXED_POINT_TOLERANCE = 1e-12
MAX_CYCLES = 10**6
_OCCUPANCY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ChannelOccupancy:
    """Classical occupancy of one molecule channel between pulses."""

    p_empty: float
    p_s: float
    p_as: float

    def __post_init__(self):
        for name in ("p_empty", "p_s", "p_as"):
            value = getattr(self, name)
            if not -_OCCUPANCY_TOLERANCE <= value <= 1 + _OCCUPANCY_TOLERANCE:
                raise ParameterError(f"{name} must be in [0, 1], got {value}")
        total = self.p_empty + self.p_s + self.p_as
        if abs(total - 1.0) > _OCCUPANCY_TOLERANCE:
            raise ParameterError(f"occupancy must sum to 1, got {total!r}")

    def as_vector(self) -> np.ndarray:
        return np.array([self.p_empty, self.p_s, self.p_as])

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "ChannelOccupancy":
        v = np.clip(np.asarray(vec, dtype=float), 0.0, None)
        v = v / v.sum()
        return cls(float(v[0]), float(v[1]), float(v[2]))


EMPTY = ChannelOccupancy(1.0, 0.0, 0.0)


@dataclass(frozen=True)
class CycleResult:
    collected_charge: float
    end_occupancy: ChannelOccupancy
    injected: float = 0.0
    cycles: int = 0


@dataclass(frozen=True)
class PulseTrace:
    """I_sub (pA) sampled on a uniform pulse-width grid (ps)."""

    dt_ps: Tuple[float, ...]
    i_sub_pa: Tuple[float, ...]
    params_snapshot: DeviceParams

    def __post_init__(self):
        object.__setattr__(self, "dt_ps", tuple(float(x) for x in self.dt_ps))
        object.__setattr__(self, "i_sub_pa", tuple(float(x) for x in self.i_sub_pa))
        if len(self.dt_ps) != len(self.i_sub_pa):
            raise ParameterError(
                f"dt and current lengths differ ({len(self.dt_ps)} vs {len(self.i_sub_pa)})"
            )
        if len(self.dt_ps) >= 2:
            steps = np.diff(self.dt_ps)
            if steps[0] <= 0 or np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, steps[0]):
                raise ParameterError("dt grid must be uniform and increasing")
        if any(value < 0 for value in self.i_sub_pa):
            raise ParameterError("substrate current must be non-negative")

    @property
    def step(self) -> float:
        if len(self.dt_ps) < 2:
            return 0.0
        return (self.dt_ps[-1] - self.dt_ps[0]) / (len(self.dt_ps) - 1)

    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.dt_ps), np.asarray(self.i_sub_pa)


# ==================== Intra-pulse ====================

def intra_pulse(params: DeviceParams, duration: float,
                pulse_width: Optional[float] = None) -> Tuple[float, float]:
    """
    Coherent evolution of a freshly injected electron, frozen into decay channels.

    Args:
        params: Device parameters
        duration: Evolution time of this electron (ps)
        pulse_width: Width of the pulse it belongs to (defaults to duration).
            For widths beyond leak_threshold the last (pulse_width -
            leak_threshold) of the evolution dephases with the extra gamma_leak.

    Returns:
        (p_s, p_as): probabilities of the slow and fast decay channel
    """
    if duration < 0:
        raise ParameterError(f"duration must be >= 0, got {duration}")
    width = duration if pulse_width is None else pulse_width
    gamma_phi = dephasing_rate(params, params.temperature)
    leak_time = min(duration, max(0.0, width - params.leak_threshold))

    state = injected_state()
    coherent = EvolutionSpec(params.delta_e, gamma_phi, params.dt_integrator)
    state = evolve_pulse(state, coherent, duration - leak_time)
    if leak_time > 0 and params.gamma_leak > 0:
        leaky = EvolutionSpec(params.delta_e, gamma_phi + params.gamma_leak, params.dt_integrator)
        state = evolve_pulse(state, leaky, leak_time)
    elif leak_time > 0:
        state = evolve_pulse(state, coherent, leak_time)

    p_s = min(1.0, max(0.0, localized_population(state, 1)))
    return p_s, 1.0 - p_s


# ==================== Inter-pulse ====================

def _decay_coefficients(params: DeviceParams, duration: float) -> Tuple[float, float, float]:
    """
    Exact solution of the triangular rate system over `duration`.

    Returns:
        (s_survival, as_to_s, as_survival): S stays S, AS ends in S, AS stays AS
    """
    gs, ga, gp = params.gamma_s, params.gamma_as, params.gamma_ph
    s_survival = math.exp(-gs * duration)
    as_survival = math.exp(-(ga + gp) * duration)
    d = ga + gp - gs
    if d == 0:
        as_to_s = gp * duration * s_survival
    else:
        as_to_s = gp * s_survival * (-math.expm1(-d * duration)) / d
    return s_survival, as_to_s, as_survival


def rate_matrix(params: DeviceParams) -> np.ndarray:
    """Generator over (empty, S, AS, collected); columns are the source state."""
    gs, ga, gp = params.gamma_s, params.gamma_as, params.gamma_ph
    Q = np.zeros((4, 4))
    Q[1, 1] = -gs
    Q[3, 1] = gs
    Q[2, 2] = -(ga + gp)
    Q[1, 2] = gp
    Q[3, 2] = ga
    return Q


def inter_pulse(occ: ChannelOccupancy, params: DeviceParams, duration: float) -> CycleResult:
    """Classical decay and phonon reset between pulses; collected electrons leave the channel."""
    if duration < 0:
        raise ParameterError(f"duration must be >= 0, got {duration}")
    s_survival, as_to_s, as_survival = _decay_coefficients(params, duration)
    s_end = occ.p_s * s_survival + occ.p_as * as_to_s
    as_end = occ.p_as * as_survival
    collected = (occ.p_s * -math.expm1(-params.gamma_s * duration)
                 + occ.p_as * (1.0 - as_to_s - as_survival))
    collected = max(0.0, collected)
    end = ChannelOccupancy.from_vector([occ.p_empty + collected, s_end, as_end])
    return CycleResult(collected_charge=collected, end_occupancy=end)


# ==================== Cycle map ====================

def _check_pulse_width(params: DeviceParams, dt: float):
    if not 0 <= dt < params.t_rep:
        raise ParameterError(f"dt must satisfy 0 <= dt < t_rep={params.t_rep}, got {dt}")


def _channel_split(params: DeviceParams, evolution: float, pulse_width: float,
                   suppress_oscillation: bool = False) -> Tuple[float, float]:
    if suppress_oscillation:
        return 0.5, 0.5
    return intra_pulse(params, evolution, pulse_width)


def cycle_map(params: DeviceParams, dt: float, evolution: Optional[float] = None,
              suppress_oscillation: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    One refill + inter-pulse cycle as a linear map on (empty, S, AS).

    Returns:
        (M, c): next occupancy is M @ occ, collected charge is c @ occ
    """
    _check_pulse_width(params, dt)
    evolution = dt if evolution is None else evolution
    p_s, p_as = _channel_split(params, evolution, dt, suppress_oscillation)
    eta = params.eta_inject

    refill = np.array([
        [1.0 - eta, 0.0, 0.0],
        [eta * p_s, 1.0, 0.0],
        [eta * p_as, 0.0, 1.0],
    ])
    s_survival, as_to_s, as_survival = _decay_coefficients(params, params.t_rep - dt)
    s_loss = -math.expm1(-params.gamma_s * (params.t_rep - dt))
    as_loss = 1.0 - as_to_s - as_survival
    decay = np.array([
        [1.0, s_loss, as_loss],
        [0.0, s_survival, as_to_s],
        [0.0, 0.0, as_survival],
    ])
    collect = np.array([0.0, s_loss, as_loss])
    return decay @ refill, collect @ refill


def _steady_channel(params: DeviceParams, dt: float, evolution: float,
                    suppress_oscillation: bool = False,
                    start: Optional[ChannelOccupancy] = None) -> CycleResult:
    M, collect = cycle_map(params, dt, evolution, suppress_oscillation)
    x = (start or EMPTY).as_vector()

    # Each pass applies the map squared: 1, 2, 4, ... cycles
    power = M
    cycles = 0
    applied = 1
    while True:
        x_next = power @ x
        cycles += applied
        moved = float(np.max(np.abs(x_next - x)))
        x = x_next
        if moved < FIXED_POINT_TOLERANCE:
            break
        if cycles >= MAX_CYCLES:
            raise ConvergenceError(
                f"steady state not reached after {cycles} cycles (last move {moved:.3g}); "
                f"check the decay and injection rates"
            )
        power = power @ power
        applied *= 2

    x = x / x.sum()
    logger.debug("Steady state at dt=%.6g (evolution %.6g) after %d cycles", dt, evolution, cycles)
    injected = params.eta_inject * x[0]
    return CycleResult(
        collected_charge=float(collect @ x),
        end_occupancy=ChannelOccupancy.from_vector(M @ x),
        injected=float(injected),
        cycles=cycles,
    )


def steady_cycle(params: DeviceParams, dt: float,
                 start: Optional[ChannelOccupancy] = None) -> CycleResult:
    """
    Steady per-cycle collected charge of a single channel at pulse width dt.

    Raises:
        ParameterError: Unless 0 <= dt < t_rep
        ConvergenceError: If the fixed point is not reached within 1e6 cycles
    """
    return _steady_channel(params, dt, dt, start=start)


# ==================== Staircase and current ====================

def staircase_channels(dt: float, params: DeviceParams) -> List[Tuple[int, float]]:
    """Electrons injected during a pulse of width dt, as (index, evolution time)."""
    if dt < 0:
        raise ParameterError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return []
    k = min(int(math.ceil(dt / params.tau_step - 1e-9)), params.k_max)
    return [(j, dt - (j - 1) * params.tau_step) for j in range(1, k + 1)]


def current_scale(params: DeviceParams) -> float:
    """pA of substrate current per electron collected per cycle."""
    return CONSTANTS.e_charge / params.t_rep * molecules_in_area(params) * params.s_a


def leak_current(params: DeviceParams, dt: float) -> float:
    return max(0.0, dt - params.leak_threshold) * params.leak_slope


def i_sub_point(params: DeviceParams, dt: float) -> float:
    """DC substrate current (pA) at pulse width dt."""
    _check_pulse_width(params, dt)
    collected = 0.0
    for index, evolution in staircase_channels(dt, params):
        suppress = index == 2 and params.suppress_channel_2_oscillation
        collected += _steady_channel(params, dt, evolution, suppress).collected_charge
    return collected * current_scale(params) + leak_current(params, dt)


def simulate_points(params: DeviceParams, dt_values: Sequence[float]) -> np.ndarray:
    """i_sub_point over arbitrary pulse widths."""
    return np.array([i_sub_point(params, float(dt)) for dt in dt_values])


def sweep(params: DeviceParams, spec: SweepSpec, workers: int = 1) -> PulseTrace:
    """
    Evaluate I_sub on every grid point of the sweep.

    Points are independent; with workers > 1 they are evaluated in a process
    pool and reassembled in grid order.

    Raises:
        ParameterError: If params or the sweep violate an invariant
    """
    violations = validate(params, spec)
    if violations:
        raise ParameterError("; ".join(violations))

    grid = spec.grid()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            currents = list(pool.map(partial(i_sub_point, params), grid, chunksize=16))
    else:
        currents = [i_sub_point(params, dt) for dt in grid]
    logger.info("Swept %d points (%.6g..%.6g ps)", len(grid), spec.dt_min, spec.dt_max)
    return PulseTrace(dt_ps=tuple(grid), i_sub_pa=tuple(currents), params_snapshot=params)
