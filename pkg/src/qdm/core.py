"""
Core units, constants and device parameters.

Every quantity in the package uses the ps / meV / pA / K system:
energies in meV, times in ps, rates in 1/ps, currents in pA. In this
system hbar, h and k_B are all of order one.

The parameter file format (consumed by the CLI) is UTF-8 text with one
``key = value`` pair per line; ``#`` starts a comment and keys are the
DeviceParams field names.
"""

import logging
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

logger = logging.getLogger(__name__)


# ==================== Constants ====================

@dataclass(frozen=True)
class Constants:
    """Physical constants in ps/meV/pA/K units."""

    hbar: float = 0.6582119569      # meV*ps
    h: float = 4.135667696          # meV*ps
    k_B: float = 0.0861733          # meV/K
    mu_B: float = 0.0578838         # meV/T
    e_charge: float = 1.602176634e5  # pA*ps (1.602176634e-19 C)


CONSTANTS = Constants()

UM2_TO_CM2 = 1.0e-8


# ==================== Errors ====================

class ParameterError(ValueError):
    """A value violates a precondition of an operation."""


class ParameterFileError(ValueError):
    """A parameter file (or override) could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class WindowError(ValueError):
    """An analysis window is malformed or outside the trace."""


class ConvergenceError(RuntimeError):
    """An iterative numerical procedure failed to converge."""


# ==================== Parameter Records ====================

@dataclass(frozen=True)
class DeviceParams:
    """All physical and device parameters of the QD-molecule experiment."""

    delta_e: float = 1.0                  # meV, S/AS splitting
    gamma_s: float = 6.5e-7               # 1/ps, S -> substrate
    gamma_as: float = 1.35e-6             # 1/ps, AS -> substrate
    gamma_ph: float = 4.0e-5              # 1/ps, AS -> S phonon relaxation (25 ns)
    gamma_phi0: float = 0.01              # 1/ps, dephasing prefactor
    dephasing_exponent: float = 2.0
    temperature: float = 4.0              # K
    n_dot: float = 5.0e10                 # molecules/cm^2
    a_dot: float = 2500.0                 # um^2 (50 x 50)
    s_a: float = 1.0e-5                   # amplifier broadband sensitivity
    t_rep: float = 10000.0                # ps (100 MHz)
    tau_step: float = 100.0               # ps per staircase electron
    eta_inject: float = 0.7
    k_max: int = 3
    leak_threshold: float = 400.0         # ps
    leak_slope: float = 0.5               # pA/ps
    gamma_leak: float = 1.0               # 1/ps, dephasing beyond leak_threshold
    lever_arm: float = 20.0               # meV/V
    g_factor: Optional[float] = None      # unmeasured; set explicitly
    e_charging: float = 9.0               # meV, metadata only
    dt_integrator: float = 0.001          # ps
    suppress_channel_2_oscillation: bool = False


@dataclass(frozen=True)
class SweepSpec:
    """Uniform pulse-width grid dt_min..dt_max (inclusive) in steps of dt_step."""

    dt_min: float
    dt_max: float
    dt_step: float = 1.0

    def __post_init__(self):
        problems = validate_sweep(self)
        if problems:
            raise ParameterError("; ".join(problems))

    @property
    def n_points(self) -> int:
        return int(round((self.dt_max - self.dt_min) / self.dt_step)) + 1

    def grid(self) -> List[float]:
        """Grid values computed by index so they are reproducible bit for bit."""
        return [self.dt_min + i * self.dt_step for i in range(self.n_points)]


ValidationReport = List[str]


def validate_sweep(spec: SweepSpec) -> ValidationReport:
    violations = []
    if spec.dt_min < 0:
        violations.append(f"dt_min >= 0 (got {spec.dt_min})")
    if not spec.dt_max > spec.dt_min:
        violations.append(f"dt_max > dt_min (got {spec.dt_max} <= {spec.dt_min})")
    if not spec.dt_step > 0:
        violations.append(f"dt_step > 0 (got {spec.dt_step})")
    else:
        steps = (spec.dt_max - spec.dt_min) / spec.dt_step
        if abs(steps - round(steps)) > 1e-9:
            violations.append(
                f"(dt_max - dt_min)/dt_step integral (got {steps:.12g})"
            )
    return violations


def validate(params: DeviceParams, sweep: Optional[SweepSpec] = None) -> ValidationReport:
    """
    Check every DeviceParams invariant.

    Returns:
        List of violated invariants, empty iff params are usable by all modules.
    """
    violations = []

    if not params.delta_e > 0:
        violations.append(f"delta_e > 0 (got {params.delta_e})")

    for name in ("gamma_s", "gamma_as", "gamma_ph", "gamma_phi0", "gamma_leak"):
        value = getattr(params, name)
        if not value >= 0:
            violations.append(f"{name} >= 0 (got {value})")

    if params.gamma_as < params.gamma_s:
        violations.append(
            f"gamma_as >= gamma_s: AS decay must not be slower than S decay "
            f"(got {params.gamma_as} < {params.gamma_s})"
        )

    if not params.dephasing_exponent >= 0:
        violations.append(f"dephasing_exponent >= 0 (got {params.dephasing_exponent})")
    if not params.temperature >= 0:
        violations.append(f"temperature >= 0 (got {params.temperature})")
    # eta_inject = 0 is allowed as a no-injection control run
    if not 0 <= params.eta_inject <= 1:
        violations.append(f"0 <= eta_inject <= 1 (got {params.eta_inject})")
    if not params.tau_step > 0:
        violations.append(f"tau_step > 0 (got {params.tau_step})")
    if not params.t_rep > 0:
        violations.append(f"t_rep > 0 (got {params.t_rep})")
    if not (isinstance(params.k_max, int) and params.k_max >= 1):
        violations.append(f"k_max >= 1 (got {params.k_max})")
    if not params.s_a > 0:
        violations.append(f"s_a > 0 (got {params.s_a})")
    if not params.leak_threshold >= 0:
        violations.append(f"leak_threshold >= 0 (got {params.leak_threshold})")
    if not params.leak_slope >= 0:
        violations.append(f"leak_slope >= 0 (got {params.leak_slope})")
    if not params.lever_arm > 0:
        violations.append(f"lever_arm > 0 (got {params.lever_arm})")
    if params.g_factor is not None and not math.isfinite(params.g_factor):
        violations.append(f"g_factor finite (got {params.g_factor})")

    if not molecules_in_area(params) >= 1:
        violations.append(
            f"n_dot * a_dot >= 1 molecule (got {molecules_in_area(params):.6g})"
        )

    if not params.dt_integrator > 0:
        violations.append(f"dt_integrator > 0 (got {params.dt_integrator})")
    elif params.delta_e > 0 and params.dt_integrator > 0.05 * CONSTANTS.h / params.delta_e:
        violations.append(
            f"dt_integrator <= 0.05*h/delta_e = {0.05 * CONSTANTS.h / params.delta_e:.6g} "
            f"(got {params.dt_integrator})"
        )

    if sweep is not None:
        violations.extend(validate_sweep(sweep))
        if not params.t_rep > sweep.dt_max:
            violations.append(f"t_rep > max sweep dt (got {params.t_rep} <= {sweep.dt_max})")

    return violations


# ==================== Unit Helpers ====================

def area_cm2(a_dot_um2: float) -> float:
    """Convert an area in um^2 to cm^2."""
    return a_dot_um2 * UM2_TO_CM2


def molecules_in_area(params: DeviceParams) -> float:
    """Number of QD molecules under the injection electrode (n_dot * A_dot)."""
    return params.n_dot * area_cm2(params.a_dot)


def tau_decay_default(params: DeviceParams) -> float:
    """Decay time implied by the mean of the S and AS substrate rates (ps)."""
    mean_rate = 0.5 * (params.gamma_s + params.gamma_as)
    if mean_rate <= 0:
        raise ParameterError("gamma_s + gamma_as must be > 0 to define a decay time")
    return 1.0 / mean_rate


def period_from_energy(energy: float) -> float:
    """Oscillation period h/E (ps) for an energy in meV."""
    if energy <= 0:
        raise ParameterError(f"energy must be > 0, got {energy}")
    return CONSTANTS.h / energy


def energy_from_period(period: float) -> float:
    """Energy h/T (meV) for a period in ps."""
    if period <= 0:
        raise ParameterError(f"period must be > 0, got {period}")
    return CONSTANTS.h / period


# ==================== Dephasing ====================

def dephasing_rate(params: DeviceParams, temperature: float) -> float:
    """
    Temperature-dependent pure dephasing rate gamma_phi(T) in 1/ps.

    gamma_phi(T) = gamma_phi0 * (k_B*T / delta_e)**p; zero at T = 0.
    """
    if temperature < 0:
        raise ParameterError(f"temperature must be >= 0, got {temperature}")
    if params.delta_e <= 0:
        raise ParameterError(f"delta_e must be > 0, got {params.delta_e}")
    if temperature == 0:
        return 0.0
    ratio = CONSTANTS.k_B * temperature / params.delta_e
    return params.gamma_phi0 * ratio ** params.dephasing_exponent


# ==================== Parameter Files ====================

_BOOL_TRUE = {"true", "yes", "on", "1"}
_BOOL_FALSE = {"false", "no", "off", "0"}


def _field_kinds() -> Dict[str, str]:
    kinds = {}
    for f in fields(DeviceParams):
        if f.name == "g_factor":
            kinds[f.name] = "optional_float"
        elif isinstance(f.default, bool):
            kinds[f.name] = "bool"
        elif isinstance(f.default, int):
            kinds[f.name] = "int"
        else:
            kinds[f.name] = "float"
    return kinds


PARAM_KINDS = _field_kinds()


def convert_value(key: str, raw: str, line: Optional[int] = None):
    """Convert the text of a parameter value to the field's type."""
    if key not in PARAM_KINDS:
        raise ParameterFileError(f"unknown parameter '{key}'", line)
    kind = PARAM_KINDS[key]
    text = raw.strip()
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered in _BOOL_TRUE:
                return True
            if lowered in _BOOL_FALSE:
                return False
            raise ValueError(text)
        if kind == "int":
            number = float(text)
            if number != int(number):
                raise ValueError(text)
            return int(number)
        if kind == "optional_float" and text.lower() in ("none", ""):
            return None
        value = float(text)
    except ValueError:
        raise ParameterFileError(f"invalid value for '{key}': '{text}'", line)
    if not math.isfinite(value):
        raise ParameterFileError(f"non-finite value for '{key}': '{text}'", line)
    return value


def parse_params(text: str, base: Optional[DeviceParams] = None,
                 skip_foreign_comments: bool = False) -> DeviceParams:
    """
    Parse the ``key = value`` parameter format.

    Args:
        text: File contents
        base: Params to override (embedded defaults when None)
        skip_foreign_comments: Read ``# key = value`` comment lines as entries
            (used for CSV provenance headers) and ignore other comments

    Raises:
        ParameterFileError: On a malformed line, unknown key or bad value
    """
    values = {}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if skip_foreign_comments:
            if not line.startswith("#"):
                continue
            line = line.lstrip("#").strip()
            if "=" not in line:
                continue
            key = line.split("=", 1)[0].strip()
            if key not in PARAM_KINDS:
                continue
        else:
            line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterFileError(f"expected 'key = value', got '{raw_line.strip()}'", number)
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ParameterFileError(f"duplicate parameter '{key}'", number)
        values[key] = convert_value(key, raw_value, number)

    return replace(base or DeviceParams(), **values)


def load_params(path: Union[str, Path], base: Optional[DeviceParams] = None) -> DeviceParams:
    """Read a parameter file from disk."""
    path = Path(path)
    if not path.exists():
        raise ParameterFileError(f"parameter file not found: {path}")
    logger.debug("Loading parameters from %s", path)
    return parse_params(path.read_text(encoding="utf-8"), base)


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def format_params(params: DeviceParams, prefix: str = "") -> str:
    """Render params as parameter-file lines (re-parses to an equal DeviceParams)."""
    lines = [f"{prefix}{f.name} = {format_value(getattr(params, f.name))}"
             for f in fields(DeviceParams)]
    return "\n".join(lines) + "\n"


def apply_overrides(params: DeviceParams, overrides: Mapping[str, object]) -> DeviceParams:
    """Replace fields from a mapping of already-typed or textual values."""
    converted = {}
    for key, value in overrides.items():
        if isinstance(value, str):
            converted[key] = convert_value(key, value)
        elif key not in PARAM_KINDS:
            raise ParameterFileError(f"unknown parameter '{key}'")
        else:
            converted[key] = value
    return replace(params, **converted)
