"""
CSV and JSON output for simulation logs, plus figure-ready plot tables.

Floats are written with ``repr`` so identical logs give identical bytes.
Wall-clock timing lives only in ``timing.csv`` and the summary's
``total_solve_time_s`` key.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from .simulation import SimLog, summarize

STATE_NAMES = ("x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "wx", "wy", "wz")
PIXEL_NAMES = tuple(f"c{k}{a}" for k in range(1, 5) for a in "xy")
OUTPUT_NAMES = tuple(f"range_{k}" for k in range(1, 5)) + PIXEL_NAMES + ("rate_x", "rate_y", "rate_z")
CONTROL_NAMES = ("ux", "uy", "uz", "Mx", "My", "Mz")
MPC_NAMES = ("eps", "qp_status", "qp_iterations", "kkt_max", "spectral_radius",
             "margin_fov_max", "margin_z", "ladder_change", "saturated", "tightened_empty")
TIMING_FILE = "timing.csv"
SUMMARY_FILE = "summary.json"


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _vector_rows(log: SimLog, name: str, with_time: bool = True):
    for rec in log.records:
        values = list(np.asarray(getattr(rec, name)).ravel())
        yield ([rec.k, rec.t] + values) if with_time else values


def emit_logs(log: SimLog, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write one CSV per stream and ``summary.json``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kt = ["k", "t_s"]
    paths = {}

    def put(name, header, rows):
        paths[name] = out / name
        _write_csv(paths[name], header, rows)

    put("states.csv", kt + list(STATE_NAMES), _vector_rows(log, "xi_true"))
    put("estimates.csv", kt + [f"{s}_hat" for s in STATE_NAMES] + ["sigma_trace"],
        ([r.k, r.t] + list(r.xi_hat) + [r.sigma_trace] for r in log.records))
    put("reference.csv", kt + [f"{s}_ref" for s in STATE_NAMES], _vector_rows(log, "xi_ref"))
    put("measurements.csv", kt + list(OUTPUT_NAMES), _vector_rows(log, "y"))
    put("pixels.csv", list(PIXEL_NAMES), _vector_rows(log, "pixels", with_time=False))
    put("pixels_ref.csv", list(PIXEL_NAMES), _vector_rows(log, "pixels_ref", with_time=False))
    put("controls.csv", kt + list(CONTROL_NAMES), _vector_rows(log, "u"))
    put("mpc.csv", kt + list(MPC_NAMES),
        ([r.k, r.t] + [getattr(r, n) for n in MPC_NAMES] for r in log.records))
    put(TIMING_FILE, ["k", "solve_time_s"],
        ([r.k, dt] for r, dt in zip(log.records, log.solve_times)))

    summary = {"header": log.header, **summarize(log)}
    paths[SUMMARY_FILE] = out / SUMMARY_FILE
    paths[SUMMARY_FILE].write_text(json.dumps(summary, indent=2) + "\n")
    return paths


def read_csv(path: Union[str, Path]):
    """(header, float array) of a numeric CSV written by :func:`emit_logs`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data


def plotdata(log_dir: Union[str, Path], out_dir: Union[str, Path, None] = None) -> List[Path]:
    """Figure-ready tables: 3-D trace, altitude against its bound, pixel traces
    with the FOV box."""
    src = Path(log_dir)
    out = Path(out_dir) if out_dir is not None else src / "plots"
    out.mkdir(parents=True, exist_ok=True)
    summary = json.loads((src / SUMMARY_FILE).read_text())
    header = summary["header"]
    _, states = read_csv(src / "states.csv")
    _, ref = read_csv(src / "reference.csv")
    _, pix = read_csv(src / "pixels.csv")
    _, pix_ref = read_csv(src / "pixels_ref.csv")
    t = states[:, 1]
    z_lo = header["z_bounds_km"][0]
    s_fov = float(header["s_fov"])
    written = []

    def put(name, cols, rows):
        path = out / name
        _write_csv(path, cols, rows)
        written.append(path)

    put("trajectory_3d.csv", ["t_s", "x", "y", "z", "x_ref", "y_ref", "z_ref"],
        np.column_stack([t, states[:, 2:5], ref[:, 2:5]]))
    put("altitude.csv", ["t_s", "z", "z_ref", "z_cnstr"],
        np.column_stack([t, states[:, 4], ref[:, 4],
                         np.full(t.shape, np.nan if z_lo is None else z_lo)]))
    put("pixel_traces.csv", ["t_s"] + list(PIXEL_NAMES) + [f"{n}_ref" for n in PIXEL_NAMES],
        np.column_stack([t, pix, pix_ref]))
    put("fov_box.csv", ["cx", "cy"],
        [[-s_fov, -s_fov], [s_fov, -s_fov], [s_fov, s_fov], [-s_fov, s_fov], [-s_fov, -s_fov]])
    return written
