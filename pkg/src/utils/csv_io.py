"""
CSV Result Files

Reads and writes every result file of the simulator:
- traces: ``# key = value`` parameter snapshot, then ``delta_t_ps,i_sub_pA``
- window analyses, spectra, dI/dV curves, trajectories and summaries
- optional gnuplot scripts next to a data file

All writes go through a temporary file in the target directory followed by
os.replace, so a crash never leaves a half-written result.
"""

import csv
import io
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from src.qdm.analysis import PeriodEstimate, Spectrum
from src.qdm.core import DeviceParams, ParameterFileError, format_params, parse_params
from src.qdm.dynamics import Trajectory
from src.qdm.protocol import PulseTrace

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TRACE_HEADER = ["delta_t_ps", "i_sub_pA"]
ESTIMATE_HEADER = ["window_lo", "window_hi", "period_ps", "energy_meV", "significance", "ok"]
SPECTRUM_HEADER = ["period_ps", "magnitude"]
DIDV_HEADER = ["bias_V", "didv_au"]
TRAJECTORY_HEADER = ["t_ps", "p_s", "p_as", "re_coh", "im_coh"]


def format_number(value) -> str:
    """Fixed text for a CSV cell; empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.12g}"


def format_current(value: float) -> str:
    return f"{value:.12f}"


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write text to path via a temporary sibling file and os.replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    logger.debug("Wrote %s", path)
    return path


def render_csv(header: Sequence[str], rows: Iterable[Sequence[str]],
               comments: Optional[Sequence[str]] = None) -> str:
    buffer = io.StringIO()
    for comment in comments or []:
        buffer.write(f"# {comment}\n" if comment else "#\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()


def write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence],
               comments: Optional[Sequence[str]] = None) -> Path:
    """Write a generic CSV with formatted numeric cells."""
    text_rows = [[cell if isinstance(cell, str) else format_number(cell) for cell in row]
                 for row in rows]
    return atomic_write_text(path, render_csv(header, text_rows, comments))


def read_rows(path: PathLike) -> Tuple[List[str], List[Tuple[int, List[str]]], str]:
    """
    Read a CSV with ``#`` comment lines.

    Returns:
        (header, [(line number, cells)], comment text)
    """
    path = Path(path)
    if not path.exists():
        raise ParameterFileError(f"file not found: {path}")
    header = None
    rows = []
    comments = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                comments.append(stripped)
                continue
            cells = next(csv.reader([stripped]))
            if header is None:
                header = [cell.strip() for cell in cells]
            else:
                rows.append((number, [cell.strip() for cell in cells]))
    if header is None:
        raise ParameterFileError(f"{path}: no header row")
    return header, rows, "\n".join(comments)


# ==================== Traces ====================

def trace_text(trace: PulseTrace, extra_columns: Optional[Dict[str, Sequence[float]]] = None) -> str:
    extra_columns = extra_columns or {}
    for name, values in extra_columns.items():
        if len(values) != len(trace.dt_ps):
            raise ValueError(f"column {name} has {len(values)} values, trace has {len(trace.dt_ps)}")
    comments = format_params(trace.params_snapshot).splitlines()
    header = TRACE_HEADER + list(extra_columns)
    rows = []
    for i, (dt, current) in enumerate(zip(trace.dt_ps, trace.i_sub_pa)):
        row = [format_number(dt), format_current(current)]
        row.extend(format_current(values[i]) for values in extra_columns.values())
        rows.append(row)
    return render_csv(header, rows, comments)


def write_trace(path: PathLike, trace: PulseTrace,
                extra_columns: Optional[Dict[str, Sequence[float]]] = None) -> Path:
    """Trace CSV with the parameter snapshot as ``# key = value`` header lines."""
    return atomic_write_text(path, trace_text(trace, extra_columns))


def read_trace(path: PathLike, base: Optional[DeviceParams] = None) -> PulseTrace:
    """
    Read a trace CSV (any extra columns are ignored).

    Raises:
        ParameterFileError: Missing columns or non-numeric cells
    """
    header, rows, comments = read_rows(path)
    for column in TRACE_HEADER:
        if column not in header:
            raise ParameterFileError(f"{path}: missing column '{column}'")
    i_dt = header.index(TRACE_HEADER[0])
    i_cur = header.index(TRACE_HEADER[1])
    params = parse_params(comments, base, skip_foreign_comments=True)

    dt_values = []
    currents = []
    for number, cells in rows:
        try:
            dt_values.append(float(cells[i_dt]))
            currents.append(float(cells[i_cur]))
        except (ValueError, IndexError):
            raise ParameterFileError(f"{path}: malformed row", number)
    return PulseTrace(dt_ps=tuple(dt_values), i_sub_pa=tuple(currents), params_snapshot=params)


# ==================== Analysis results ====================

def estimate_row(estimate: PeriodEstimate) -> List:
    window = estimate.window
    return [
        window.dt_lo if window else None,
        window.dt_hi if window else None,
        estimate.period,
        estimate.energy,
        estimate.significance,
        estimate.ok,
    ]


def write_estimates(path: PathLike, estimates: Sequence[PeriodEstimate]) -> Path:
    comments = [f"window {e.window.label()}: {e.error}" for e in estimates if e.error and e.window]
    return write_rows(path, ESTIMATE_HEADER, [estimate_row(e) for e in estimates], comments)


def write_spectrum(path: PathLike, spectrum: Spectrum) -> Path:
    comments = [
        f"noise_floor = {format_number(spectrum.noise_floor)}",
        f"resolution_floor = {format_number(spectrum.resolution_floor)}",
        f"grid_step = {format_number(spectrum.grid_step)}",
    ]
    rows = zip(spectrum.periods.tolist(), spectrum.magnitudes.tolist())
    return write_rows(path, SPECTRUM_HEADER, rows, comments)


def write_didv(path: PathLike, curve: Sequence[Tuple[float, float]],
               comments: Optional[Sequence[str]] = None) -> Path:
    return write_rows(path, DIDV_HEADER, curve, comments)


def write_trajectory(path: PathLike, traj: Trajectory) -> Path:
    rows = []
    for t, state in zip(traj.times, traj.states):
        coherence = state.coherence
        rows.append([t, state.p_s, state.p_as, coherence.real, coherence.imag])
    return write_rows(path, TRAJECTORY_HEADER, rows)


# ==================== gnuplot ====================

def write_gnuplot(data_path: PathLike, title: str, xlabel: str, ylabel: str,
                  x_column: int = 1, y_column: int = 2) -> Path:
    """Companion ``.gp`` script plotting one column of a CSV data file."""
    data_path = Path(data_path)
    script = (
        "set datafile separator ','\n"
        "set key off\n"
        f"set title '{title}'\n"
        f"set xlabel '{xlabel}'\n"
        f"set ylabel '{ylabel}'\n"
        f"plot '{data_path.name}' every ::1 using {x_column}:{y_column} with lines\n"
    )
    return atomic_write_text(data_path.with_suffix(".gp"), script)
