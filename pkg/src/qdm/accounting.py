"""
Charge accounting: from measured substrate current to electrons per pulse.

    I_pulse = I_sub / (dt/t_rep) / (t_rep/tau) / (N_dot * A_dot * S_A)

The molecule density is per cm^2 while the electrode area is in um^2; the
conversion happens here and nowhere else.
"""

import math
from dataclasses import dataclass
from typing import Tuple

from src.qdm.core import CONSTANTS, DeviceParams, ParameterError, area_cm2


@dataclass(frozen=True)
class AccountingInputs:
    i_sub: float          # pA
    dt: float             # ps
    t_rep: float          # ps
    tau_decay_min: float  # ps
    n_dot: float          # 1/cm^2
    a_dot: float          # um^2
    s_a: float

    def __post_init__(self):
        for name in ("i_sub", "dt", "t_rep", "tau_decay_min", "n_dot", "a_dot", "s_a"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ParameterError(f"{name} must be > 0, got {value}")
        if not self.dt < self.t_rep:
            raise ParameterError(f"dt must be < t_rep ({self.dt} >= {self.t_rep})")

    @classmethod
    def from_params(cls, i_sub: float, dt: float, params: DeviceParams,
                    tau_decay_min: float) -> "AccountingInputs":
        return cls(i_sub=i_sub, dt=dt, t_rep=params.t_rep, tau_decay_min=tau_decay_min,
                   n_dot=params.n_dot, a_dot=params.a_dot, s_a=params.s_a)


def i_pulse_qd(inputs: AccountingInputs) -> float:
    """Current injected into one QD molecule during a single pulse (pA)."""
    duty = inputs.dt / inputs.t_rep
    decay_ratio = inputs.t_rep / inputs.tau_decay_min
    detected = inputs.n_dot * area_cm2(inputs.a_dot) * inputs.s_a
    if duty == 0 or decay_ratio == 0 or detected == 0:
        raise ZeroDivisionError("accounting divisor is zero")
    return inputs.i_sub / duty / decay_ratio / detected


def electrons_per_pulse(i_pulse: float, dt: float) -> float:
    """Charge of one pulse in units of e."""
    if not (i_pulse > 0 and dt > 0):
        raise ParameterError(f"i_pulse and dt must be > 0 (got {i_pulse}, {dt})")
    return i_pulse * dt / CONSTANTS.e_charge


def per_molecule_current(i_dc: float, n_dot: float, a_dot: float) -> float:
    """DC current per molecule (pA) under an electrode of a_dot um^2."""
    if not (i_dc > 0 and n_dot > 0 and a_dot > 0):
        raise ParameterError(f"i_dc, n_dot and a_dot must be > 0 (got {i_dc}, {n_dot}, {a_dot})")
    return i_dc / (n_dot * area_cm2(a_dot))


def tau_decay_min(i_dc: float, n_dot: float, a_dot: float) -> float:
    """Lower bound of the decay time (ps): one electron per molecule at the DC rate."""
    i_m = per_molecule_current(i_dc, n_dot, a_dot)
    if i_m == 0:
        raise ZeroDivisionError("per-molecule current is zero")
    return CONSTANTS.e_charge / i_m


def staircase_row(i_sub: float, dt: float, params: DeviceParams,
                  tau: float) -> Tuple[float, float, float]:
    """
    One row of the accounting table.

    Returns:
        (i_pulse in nA, electrons per pulse, electrons per staircase electron)
    """
    i_pulse = i_pulse_qd(AccountingInputs.from_params(i_sub, dt, params, tau))
    electrons = electrons_per_pulse(i_pulse, dt)
    index = max(1, int(math.ceil(dt / params.tau_step - 1e-9)))
    return i_pulse / 1000.0, electrons, electrons / index
