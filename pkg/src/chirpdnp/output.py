"""Artifact writers: trajectory CSV, gnuplot data, JSON summaries and tables.

Floats are written with ``repr`` so values round-trip bit-exactly; absent
observables (two-level runs have no nuclear spin) are written as ``nan``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .propagation import OBSERVABLE_NAMES, Trajectory

TRAJECTORY_COLUMNS = ("t_us",) + OBSERVABLE_NAMES


def _header_lines(meta: dict | None) -> list[str]:
    return [f"# {k}: {v}" for k, v in (meta or {}).items()]


def trajectory_rows(traj: Trajectory):
    nan = np.full(len(traj), np.nan)
    cols = [traj.times] + [traj.observables.get(name, nan) for name in OBSERVABLE_NAMES]
    for row in zip(*cols):
        yield [float(x) for x in row]


def write_trajectory_csv(traj: Trajectory, path, meta: dict | None = None) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in _header_lines(meta):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        w.writerows(trajectory_rows(traj))
    return path


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    """Load a trajectory CSV back into ``{column: array}``."""
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    head, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(len(body), len(head))
    return {name: data[:, i] for i, name in enumerate(head)}


def emit_gnuplot_data(traj: Trajectory, path, params: dict | None = None) -> Path:
    """Whitespace-delimited trajectory with ``#`` headers naming the columns and run parameters."""
    if traj is None or len(traj) == 0:
        raise ValueError("cannot emit an empty trajectory")
    path = Path(path)
    with path.open("w") as fh:
        fh.write("# chirpdnp trajectory\n")
        for line in _header_lines(params):
            fh.write(line + "\n")
        fh.write("# " + " ".join(TRAJECTORY_COLUMNS) + "\n")
        for row in trajectory_rows(traj):
            fh.write(" ".join(repr(x) for x in row) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2) + "\n")
    return path


def write_table_csv(header, rows, path, meta: dict | None = None) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in _header_lines(meta):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path
