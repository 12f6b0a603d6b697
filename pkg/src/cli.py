"""
Command-line interface for the pulse-injection simulator.

Usage:
    python qdm.py [--params FILE] [--out DIR] [--seed N] <command> [options]

Commands:
    sweep            I_sub vs pulse width trace CSV
    analyze          windowed period detection on a trace CSV
    fit              damped-cosine or simulator-in-the-loop parameter fit
    account          per-pulse per-molecule current and electron count
    spectrum         dI/dV curve with optional Zeeman splitting
    reproduce-paper  full reference run: traces, windows, accounting, summary

Exit codes: 0 OK, 2 config/parse error, 3 validation error, 4 numerical failure.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import config
from src.qdm.accounting import per_molecule_current, staircase_row, tau_decay_min
from src.qdm.analysis import (
    PeriodEstimate,
    Window,
    analyze_windows,
    derivative,
    detrend,
    detrend_series,
    plateau_levels,
)
from src.qdm.core import (
    ConvergenceError,
    DeviceParams,
    ParameterError,
    ParameterFileError,
    SweepSpec,
    WindowError,
    apply_overrides,
    dephasing_rate,
    format_params,
    format_value,
    load_params,
    tau_decay_default,
    validate,
)
from src.qdm.dynamics import EvolutionSpec, injected_state, trajectory
from src.qdm.fitting import fit_damped_cosine, fit_device_params, parse_bounds
from src.qdm.protocol import PulseTrace, sweep
from src.qdm.spectra import bias_grid, count_maxima, didv_curve, peakset_from_params
from src.utils import csv_io

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_NUMERIC = 4

HIGH_FIELD_TESLA = 10.0
SUMMARY_HEADER = ["name", "quantity", "value", "unit", "ok"]


class ValidationFailed(Exception):
    """Parameters violate one or more invariants."""

    def __init__(self, report: List[str]):
        self.report = report
        super().__init__("; ".join(report))


# ==================== Argument Types ====================

def _floats(text: str, count: int, form: str) -> Tuple[float, ...]:
    parts = text.split(":")
    if len(parts) != count:
        raise argparse.ArgumentTypeError(f"expected {form}, got '{text}'")
    try:
        return tuple(float(part) for part in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers in {form}, got '{text}'")


def parse_sweep_range(text: str) -> Tuple[float, float, float]:
    return _floats(text, 3, "lo:hi:step")


def parse_window(text: str) -> Tuple[float, float]:
    return _floats(text, 2, "lo:hi")


def parse_assignment(text: str) -> Tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got '{text}'")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


# ==================== Parameters ====================

def resolve_params(args: argparse.Namespace, base: Optional[DeviceParams] = None,
                   **flag_overrides) -> DeviceParams:
    """
    Build DeviceParams with precedence flags > params file > base/defaults.

    Raises:
        ParameterFileError: Unreadable or malformed params file or --set item
        ValidationFailed: If the result violates an invariant
    """
    params = base or DeviceParams()
    path = getattr(args, "params", None) or config.PARAMS_FILE
    if path:
        params = load_params(path, params)

    overrides: Dict[str, object] = dict(getattr(args, "set", None) or [])
    params = apply_overrides(params, overrides)
    explicit = {key: value for key, value in flag_overrides.items() if value is not None}
    params = apply_overrides(params, explicit)

    report = validate(params)
    if report:
        raise ValidationFailed(report)
    return params


def output_dir(args: argparse.Namespace) -> Path:
    return Path(args.out or config.OUTPUT_DIR)


def _saved(path: Path):
    print(f"OK - Saved {path}")


# ==================== Commands ====================

def cmd_sweep(args: argparse.Namespace) -> int:
    params = resolve_params(args, temperature=args.temperature)
    spec = SweepSpec(*args.dt)
    report = validate(params, spec)
    if report:
        raise ValidationFailed(report)

    workers = args.workers or config.SWEEP_WORKERS
    trace = sweep(params, spec, workers=workers)

    extra = {}
    if args.derivative:
        extra["didt_pA_per_ps"] = derivative(trace).tolist()

    out = output_dir(args)
    path = csv_io.write_trace(out / f"{args.name}.csv", trace, extra)
    _saved(path)
    if args.gnuplot:
        _saved(csv_io.write_gnuplot(path, f"I_sub at {params.temperature:g} K",
                                    "pulse width (ps)", "I_sub (pA)"))

    if args.trajectory is not None:
        spec_ev = EvolutionSpec(params.delta_e, dephasing_rate(params, params.temperature),
                                params.dt_integrator)
        traj = trajectory(injected_state(), spec_ev, args.trajectory)
        _saved(csv_io.write_trajectory(out / f"{args.name}_trajectory.csv", traj))

    print(f"Swept {len(trace.dt_ps)} points, I_sub {min(trace.i_sub_pa):.4f}.."
          f"{max(trace.i_sub_pa):.4f} pA")
    return EXIT_OK


def _windows(args: argparse.Namespace) -> List[Window]:
    pairs = args.window or config.REFERENCE_WINDOWS
    return [Window(lo, hi) for lo, hi in pairs]


def _print_estimates(title: str, estimates: Sequence[PeriodEstimate]):
    print(f"\n{title}")
    print(f"  {'window (ps)':<14}{'period (ps)':>12}{'energy (meV)':>14}{'significance':>14}  ok")
    for e in estimates:
        period = f"{e.period:.3f}" if e.ok else "-"
        energy = f"{e.energy:.3f}" if e.ok else "-"
        label = e.window.label() if e.window else "-"
        print(f"  {label:<14}{period:>12}{energy:>14}{e.significance:>14.2f}  {'yes' if e.ok else 'no'}")
        if e.error:
            print(f"  WARNING: {e.error}")


def _write_analysis(out: Path, stem: str, estimates: Sequence[PeriodEstimate],
                    spectra: bool, gnuplot: bool) -> Path:
    path = csv_io.write_estimates(out / f"{stem}_windows.csv", estimates)
    _saved(path)
    if spectra:
        for e in estimates:
            if e.spectrum is None or e.window is None:
                continue
            spectrum_path = csv_io.write_spectrum(
                out / f"{stem}_spectrum_{e.window.dt_lo:g}_{e.window.dt_hi:g}.csv", e.spectrum)
            _saved(spectrum_path)
            if gnuplot:
                _saved(csv_io.write_gnuplot(spectrum_path, f"window {e.window.label()} ps",
                                            "period (ps)", "magnitude (pA)"))
    return path


def cmd_analyze(args: argparse.Namespace) -> int:
    trace = csv_io.read_trace(args.trace)
    threshold = args.threshold if args.threshold is not None else config.PERIOD_THRESHOLD
    estimates = analyze_windows(trace, _windows(args), threshold)
    stem = Path(args.trace).stem
    _write_analysis(output_dir(args), stem, estimates, args.spectra, args.gnuplot)
    _print_estimates(f"Windows of {args.trace}", estimates)
    return EXIT_OK


def _fit_cosine(args: argparse.Namespace, trace: PulseTrace) -> str:
    if args.window:
        lo, hi = args.window[0]
        series = detrend(trace, Window(lo, hi))
    else:
        dt, current = trace.arrays()
        series = detrend_series(dt, current)
    result = fit_damped_cosine(series, trace.step)
    model = result.model
    lines = [
        f"# amplitude = {format_value(model.amplitude)}",
        f"# period = {format_value(model.period)}",
        f"# phase = {format_value(model.phase)}",
        f"# t2 = {format_value(model.t2)}",
        f"# baseline = {format_value(model.baseline)}",
        f"# residual_rms = {format_value(result.residual_rms)}",
        f"# iterations = {result.iterations}",
        f"# converged = {format_value(result.converged)}",
        f"delta_e = {format_value(model.energy)}",
    ]
    print(f"Period {model.period:.4f} ps -> delta_e {model.energy:.4f} meV "
          f"(converged: {'yes' if result.converged else 'no'})")
    return "\n".join(lines) + "\n"


def _fit_device(args: argparse.Namespace, trace: PulseTrace) -> str:
    init = resolve_params(args, base=trace.params_snapshot)
    free = [name.strip() for name in (args.free or "delta_e").split(",") if name.strip()]
    bounds = parse_bounds(args.bounds or [])
    fitted, rms = fit_device_params(trace, free, bounds, init, seed=args.seed)
    for name in free:
        print(f"  {name} = {getattr(fitted, name):.6g}")
    print(f"Residual RMS {rms:.6g} pA")
    return f"# residual_rms = {format_value(rms)}\n" + format_params(fitted)


def cmd_fit(args: argparse.Namespace) -> int:
    trace = csv_io.read_trace(args.trace)
    if args.model == "cosine":
        text = _fit_cosine(args, trace)
    else:
        text = _fit_device(args, trace)
    path = Path(args.output) if args.output else output_dir(args) / f"{Path(args.trace).stem}_fit.params"
    _saved(csv_io.atomic_write_text(path, text))
    return EXIT_OK


def cmd_account(args: argparse.Namespace) -> int:
    params = resolve_params(args)
    i_m = None
    if args.idc is not None:
        i_m = per_molecule_current(args.idc, params.n_dot, params.a_dot)
        tau = tau_decay_min(args.idc, params.n_dot, params.a_dot)
    elif args.tau is not None:
        tau = args.tau
    else:
        tau = tau_decay_default(params)

    i_pulse_na, electrons, fraction = staircase_row(args.isub, args.dt, params, tau)
    if args.csv:
        header = ["i_sub_pA", "dt_ps", "tau_ps", "i_pulse_nA", "electrons", "fraction"]
        row = [args.isub, args.dt, tau, i_pulse_na, electrons, fraction]
        sys.stdout.write(csv_io.render_csv(header, [[csv_io.format_number(v) for v in row]]))
        return EXIT_OK

    if i_m is not None:
        print(f"  {'per-molecule current':<22}{i_m:.4f} pA")
    print(f"  {'tau_decay_min':<22}{tau:.6g} ps")
    print(f"  {'i_pulse_qd':<22}{i_pulse_na:.4f} nA")
    print(f"  {'electrons':<22}{electrons:.2f} e")
    print(f"  {'fraction of integer':<22}{fraction:.2f}")
    return EXIT_OK


def cmd_spectrum(args: argparse.Namespace) -> int:
    params = resolve_params(args, g_factor=args.g_factor)
    peaks = peakset_from_params(params, width=args.width)
    grid = bias_grid(args.v_min, args.v_max, args.points)
    curve = didv_curve(peaks, args.b_field, params.g_factor, grid)
    path = csv_io.write_didv(output_dir(args) / f"didv_B{args.b_field:g}T.csv", curve)
    _saved(path)
    if args.gnuplot:
        _saved(csv_io.write_gnuplot(path, f"dI/dV at B = {args.b_field:g} T",
                                    "bias (V)", "dI/dV (a.u.)"))
    print(f"{count_maxima([g for _, g in curve])} maxima at B = {args.b_field:g} T")
    return EXIT_OK


def _summary_row(name: str, quantity: str, value, unit: str, ok=None) -> List[str]:
    return [name, quantity, csv_io.format_number(value), unit, csv_io.format_number(ok)]


def _window_rows(prefix: str, estimates: Sequence[PeriodEstimate]) -> List[List[str]]:
    rows = []
    for e in estimates:
        name = f"{prefix}window_{e.window.dt_lo:g}_{e.window.dt_hi:g}"
        rows.append(_summary_row(name, "period", e.period, "ps", e.ok))
        rows.append(_summary_row(name, "energy", e.energy, "meV", e.ok))
    return rows


def cmd_reproduce_paper(args: argparse.Namespace) -> int:
    params = resolve_params(args, temperature=args.temperature)
    out = output_dir(args)
    spec = SweepSpec(*config.REFERENCE_SWEEP)
    report = validate(params, spec)
    if report:
        raise ValidationFailed(report)
    workers = config.SWEEP_WORKERS
    windows = [Window(lo, hi) for lo, hi in config.REFERENCE_WINDOWS]
    rows: List[List[str]] = []

    runs = [("", params), ("washout_", replace(params, temperature=config.WASHOUT_TEMPERATURE))]
    traces = {}
    for prefix, run_params in runs:
        stem = f"trace_{run_params.temperature:g}K"
        print(f"Sweeping at {run_params.temperature:g} K...")
        trace = sweep(run_params, spec, workers=workers)
        traces[prefix] = trace
        path = csv_io.write_trace(out / f"{stem}.csv", trace)
        _saved(path)
        if args.gnuplot:
            _saved(csv_io.write_gnuplot(path, f"I_sub at {run_params.temperature:g} K",
                                        "pulse width (ps)", "I_sub (pA)"))
        estimates = analyze_windows(trace, windows, config.PERIOD_THRESHOLD)
        _write_analysis(out, stem, estimates, True, args.gnuplot)
        _print_estimates(f"Windows at {run_params.temperature:g} K", estimates)
        rows.extend(_window_rows(prefix, estimates))

    i_m = per_molecule_current(config.REFERENCE_DC_CURRENT, params.n_dot, params.a_dot)
    tau = tau_decay_min(config.REFERENCE_DC_CURRENT, params.n_dot, params.a_dot)
    rows.append(_summary_row("dc_current", "per_molecule_current", i_m, "pA"))
    rows.append(_summary_row("dc_current", "tau_decay_min", tau, "ps"))

    print("\nStaircase accounting")
    for index, (dt, i_sub) in enumerate(config.REFERENCE_STAIRCASES, start=1):
        i_pulse_na, electrons, fraction = staircase_row(i_sub, dt, params, tau)
        rows.append(_summary_row(f"staircase_{index}", "i_pulse", i_pulse_na, "nA"))
        rows.append(_summary_row(f"staircase_{index}", "electrons", electrons, "e"))
        print(f"  dt = {dt:g} ps, I_sub = {i_sub:.2f} pA -> {electrons:.2f} e ({fraction:.0%} per electron)")

    dts = [dt for dt, _ in config.REFERENCE_STAIRCASES]
    for index, (dt, level) in enumerate(zip(dts, plateau_levels(traces[""], dts)), start=1):
        _, electrons, _ = staircase_row(level, dt, params, tau)
        rows.append(_summary_row(f"simulated_staircase_{index}", "i_sub", level, "pA"))
        rows.append(_summary_row(f"simulated_staircase_{index}", "electrons", electrons, "e"))
        print(f"  simulated dt = {dt:g} ps: I_sub = {level:.3f} pA -> {electrons:.2f} e")

    peaks = peakset_from_params(params)
    grid = bias_grid(-0.05, 0.10, 3001)
    b_fields = [0.0] + ([HIGH_FIELD_TESLA] if params.g_factor is not None else [])
    for b_field in b_fields:
        curve = didv_curve(peaks, b_field, params.g_factor, grid)
        path = csv_io.write_didv(out / f"didv_B{b_field:g}T.csv", curve)
        _saved(path)
        if args.gnuplot:
            _saved(csv_io.write_gnuplot(path, f"dI/dV at B = {b_field:g} T",
                                        "bias (V)", "dI/dV (a.u.)"))
        rows.append(_summary_row(f"didv_B{b_field:g}T", "maxima",
                                 count_maxima([g for _, g in curve]), "count"))

    if params.g_factor is None:
        print("WARNING: g_factor not set; skipping the high-field dI/dV curve")

    _saved(csv_io.write_rows(out / "summary.csv", SUMMARY_HEADER, rows))
    return EXIT_OK


# ==================== Parser ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qdm",
        description="Pulsed-injection simulator for coupled quantum-dot molecules",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Default 4 K sweep
  python qdm.py sweep --dt 0:450:1

  # Look for oscillations in two windows
  python qdm.py analyze output/sweep.csv --window 100:150 --window 350:400

  # Reference run into ./report
  python qdm.py --out report reproduce-paper
        """,
    )
    parser.add_argument("--params", help="Parameter file (key = value lines)")
    parser.add_argument("--out", help=f"Output directory (default: {config.OUTPUT_DIR})")
    parser.add_argument("--seed", type=int, default=config.DEFAULT_SEED,
                        help="Seed for randomized fit starts")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")

    overrides = argparse.ArgumentParser(add_help=False)
    overrides.add_argument("--set", action="append", type=parse_assignment, metavar="KEY=VALUE",
                           help="Override one parameter (repeatable)")

    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("sweep", parents=[overrides], help="Simulate I_sub vs pulse width")
    p.add_argument("--dt", type=parse_sweep_range, default=config.REFERENCE_SWEEP,
                   metavar="LO:HI:STEP", help="Pulse-width grid in ps (default 0:450:1)")
    p.add_argument("--temperature", type=float, help="Temperature in K")
    p.add_argument("--derivative", action="store_true",
                   help="Add a didt_pA_per_ps column")
    p.add_argument("--trajectory", type=float, metavar="PS",
                   help="Also dump the single-pulse density-matrix trajectory up to PS")
    p.add_argument("--name", default="sweep", help="Output file stem (default: sweep)")
    p.add_argument("--workers", type=int, help="Process-pool size for sweep points")
    p.add_argument("--gnuplot", action="store_true", help="Write a companion .gp script")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("analyze", help="Detect oscillation periods in a trace")
    p.add_argument("trace", help="Trace CSV written by sweep")
    p.add_argument("--window", type=parse_window, action="append", metavar="LO:HI",
                   help="Analysis window in ps (repeatable; default: reference windows)")
    p.add_argument("--threshold", type=float,
                   help=f"Peak/noise-floor significance threshold (default {config.PERIOD_THRESHOLD})")
    p.add_argument("--spectra", action="store_true", help="Write per-window spectrum CSVs")
    p.add_argument("--gnuplot", action="store_true", help="Write companion .gp scripts")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("fit", parents=[overrides], help="Fit a trace")
    p.add_argument("trace", help="Trace CSV")
    p.add_argument("--model", choices=["cosine", "device"], default="cosine",
                   help="Damped cosine on a window, or device parameters via the simulator")
    p.add_argument("--window", type=parse_window, action="append", metavar="LO:HI",
                   help="Window for the cosine model (default: whole trace)")
    p.add_argument("--free", help="Comma-separated parameters for the device model (default: delta_e)")
    p.add_argument("--bounds", action="append", metavar="NAME=LO:HI",
                   help="Bounds of a free parameter (repeatable)")
    p.add_argument("--output", help="Output parameter file")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("account", parents=[overrides], help="Electrons per pulse from I_sub")
    p.add_argument("--isub", type=float, required=True, help="Substrate current in pA")
    p.add_argument("--dt", type=float, required=True, help="Pulse width in ps")
    p.add_argument("--tau", type=float, help="Decay time in ps (default 2/(gamma_s + gamma_as))")
    p.add_argument("--idc", type=float, help="DC current in pA; derives tau from it")
    p.add_argument("--csv", action="store_true", help="Machine-readable output")
    p.set_defaults(handler=cmd_account)

    p = sub.add_parser("spectrum", parents=[overrides], help="Synthetic dI/dV curve")
    p.add_argument("--b-field", type=float, default=0.0, help="Magnetic field in T")
    p.add_argument("--g-factor", type=float, help="Electron g-factor")
    p.add_argument("--width", type=float, default=0.15, help="Lorentzian HWHM in meV")
    p.add_argument("--v-min", type=float, default=-0.05, help="Lowest bias in V")
    p.add_argument("--v-max", type=float, default=0.10, help="Highest bias in V")
    p.add_argument("--points", type=int, default=10001, help="Bias grid size")
    p.add_argument("--gnuplot", action="store_true", help="Write a companion .gp script")
    p.set_defaults(handler=cmd_spectrum)

    p = sub.add_parser("reproduce-paper", parents=[overrides],
                       help="Reference traces, window analyses, accounting and summary")
    p.add_argument("--temperature", type=float, help="Temperature of the primary run in K")
    p.add_argument("--gnuplot", action="store_true", help="Write companion .gp scripts")
    p.set_defaults(handler=cmd_reproduce_paper)

    return parser


def configure_logging(verbose: bool = False):
    level = logging.DEBUG if verbose else getattr(logging, config.LOG_LEVEL, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except ParameterFileError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationFailed as e:
        print("Validation failed:", file=sys.stderr)
        for item in e.report:
            print(f"  - {item}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ParameterError, WindowError) as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"ERROR: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
