"""
Coherent + dephasing evolution of the S/AS two-level density matrix.

States are stored in the {S, AS} energy eigenbasis where
H = diag(-dE/2, +dE/2). The localized (single-dot) states are

    |dot1> = (|S> + |AS>)/sqrt(2),   |dot2> = (|S> - |AS>)/sqrt(2)

Pulse evolution integrates

    drho/dt = -(i/hbar)[H, rho] + gamma_phi (sz rho sz - rho)

with fixed-step 4th-order Runge-Kutta. Substrate decay is off during the pulse.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from src.qdm.core import CONSTANTS, ParameterError

logger = logging.getLogger(__name__)

SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)
IDENTITY_2 = np.eye(2, dtype=complex)

# Columns: localized states in the S/AS basis
_LOCALIZED = {
    1: np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0),
    2: np.array([1.0, -1.0], dtype=complex) / math.sqrt(2.0),
}


@dataclass(frozen=True, eq=False)
class QubitState:
    """Density matrix in the S/AS basis plus probability already collected."""

    rho: np.ndarray
    collected_s: float = 0.0
    collected_as: float = 0.0

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex, copy=True)
        if rho.shape != (2, 2):
            raise ParameterError(f"rho must be 2x2, got shape {rho.shape}")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @property
    def p_s(self) -> float:
        return float(self.rho[0, 0].real)

    @property
    def p_as(self) -> float:
        return float(self.rho[1, 1].real)

    @property
    def coherence(self) -> complex:
        return complex(self.rho[0, 1])

    @property
    def trace(self) -> float:
        return float(np.trace(self.rho).real)

    def purity(self) -> float:
        return float(np.trace(self.rho @ self.rho).real)


@dataclass(frozen=True)
class EvolutionSpec:
    """Generator parameters for one pulse: splitting, dephasing and RK4 step."""

    delta_e: float
    gamma_phi: float
    dt_integrator: float = 0.001

    def __post_init__(self):
        if not self.delta_e > 0:
            raise ParameterError(f"delta_e must be > 0, got {self.delta_e}")
        if not self.gamma_phi >= 0:
            raise ParameterError(f"gamma_phi must be >= 0, got {self.gamma_phi}")
        limit = 0.05 * CONSTANTS.h / self.delta_e
        if not 0 < self.dt_integrator <= limit:
            raise ParameterError(
                f"dt_integrator must be in (0, {limit:.6g}] (>= 20 steps per period), "
                f"got {self.dt_integrator}"
            )

    def hamiltonian(self) -> np.ndarray:
        return np.diag([-0.5 * self.delta_e, 0.5 * self.delta_e]).astype(complex)


@dataclass(frozen=True)
class Trajectory:
    times: List[float] = field(default_factory=list)
    states: List[QubitState] = field(default_factory=list)


def injected_state() -> QubitState:
    """Electron freshly injected into dot 1: equal S/AS superposition."""
    return QubitState(rho=np.full((2, 2), 0.5, dtype=complex))


def _rhs(rho: np.ndarray, spec: EvolutionSpec) -> np.ndarray:
    H = spec.hamiltonian()
    drho = (-1j / CONSTANTS.hbar) * (H @ rho - rho @ H)
    drho += spec.gamma_phi * (SIGMA_Z @ rho @ SIGMA_Z - rho)
    return drho


def rk4_step(rho: np.ndarray, spec: EvolutionSpec, h: float) -> np.ndarray:
    """One explicit RK4 step of size h on the 2x2 density matrix."""
    k1 = _rhs(rho, spec)
    k2 = _rhs(rho + 0.5 * h * k1, spec)
    k3 = _rhs(rho + 0.5 * h * k2, spec)
    k4 = _rhs(rho + h * k3, spec)
    return rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def liouvillian(spec: EvolutionSpec) -> np.ndarray:
    """4x4 superoperator of the generator acting on row-major vec(rho)."""
    H = spec.hamiltonian()
    coherent = (-1j / CONSTANTS.hbar) * (np.kron(H, IDENTITY_2) - np.kron(IDENTITY_2, H.T))
    dephasing = spec.gamma_phi * (np.kron(SIGMA_Z, SIGMA_Z.T) - np.eye(4))
    return coherent + dephasing


def _step_count(duration: float, dt: float) -> int:
    return max(1, int(math.ceil(duration / dt - 1e-9)))


def _rk4_propagator(spec: EvolutionSpec, h: float) -> np.ndarray:
    # RK4 applied to a linear autonomous system is the degree-4 Taylor polynomial of hL
    A = h * liouvillian(spec)
    I = np.eye(4, dtype=complex)
    return I + A @ (I + (A / 2) @ (I + (A / 3) @ (I + A / 4)))


def evolve_pulse(state: QubitState, spec: EvolutionSpec, duration: float) -> QubitState:
    """
    Advance a state through a pulse of the given duration (ps).

    The RK4 one-step propagator is raised to the step count, which is the
    same arithmetic as stepping n times. If duration is not a multiple of
    dt_integrator the step shrinks to duration/n.

    Raises:
        ParameterError: If duration < 0
    """
    if duration < 0:
        raise ParameterError(f"duration must be >= 0, got {duration}")
    if duration == 0:
        return state

    n = _step_count(duration, spec.dt_integrator)
    step = _rk4_propagator(spec, duration / n)
    vec = np.linalg.matrix_power(step, n) @ np.asarray(state.rho).reshape(4)
    rho = vec.reshape(2, 2)
    rho = 0.5 * (rho + rho.conj().T)
    return QubitState(rho=rho, collected_s=state.collected_s, collected_as=state.collected_as)


def trajectory(state: QubitState, spec: EvolutionSpec, duration: float) -> Trajectory:
    """Step-by-step RK4 evolution sampled at every integrator step (debug dumps)."""
    if duration < 0:
        raise ParameterError(f"duration must be >= 0, got {duration}")
    n = _step_count(duration, spec.dt_integrator) if duration > 0 else 0
    h = duration / n if n else 0.0

    rho = np.array(state.rho, dtype=complex)
    times = [0.0]
    states = [state]
    for i in range(1, n + 1):
        rho = rk4_step(rho, spec, h)
        rho = 0.5 * (rho + rho.conj().T)
        times.append(i * h)
        states.append(QubitState(rho=rho, collected_s=state.collected_s,
                                 collected_as=state.collected_as))
    logger.debug("Trajectory of %d steps (h=%.4g ps)", n, h)
    return Trajectory(times=times, states=states)


def localized_population(state: QubitState, which_dot: int) -> float:
    """Population <dot_i|rho|dot_i> of dot 1 or dot 2."""
    if which_dot not in _LOCALIZED:
        raise IndexError(f"which_dot must be 1 or 2, got {which_dot}")
    v = _LOCALIZED[which_dot]
    return float((v.conj() @ np.asarray(state.rho) @ v).real)


def analytic_localized_population(t: float, delta_e: float, gamma_phi: float) -> float:
    """Closed form 1/2 (1 + exp(-2 gamma_phi t) cos(dE t / hbar)) from the injected state."""
    if t < 0:
        raise ParameterError(f"t must be >= 0, got {t}")
    return 0.5 * (1.0 + math.exp(-2.0 * gamma_phi * t) * math.cos(delta_e * t / CONSTANTS.hbar))
