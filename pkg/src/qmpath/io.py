"""CSV and JSON writers for run artifacts.

CSV files start with a ``# schema=<name>/<version>`` comment line followed
by a header row. Floats are written with 17 significant digits so values
round-trip exactly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def _fmt(v) -> str:
    if isinstance(v, (str, bytes)):
        return v if isinstance(v, str) else v.decode()
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_table(path, schema: str, columns, rows, fmt: str = "csv") -> Path:
    """Write rows (iterable of sequences or a 2-D array) as CSV or JSON.

    For ``fmt="json"`` the suffix is replaced by ``.json`` and the table is
    stored as ``{"schema": ..., "columns": [...], "rows": [...]}``.
    """
    path = Path(path)
    columns = list(columns)
    if fmt == "json":
        path = path.with_suffix(".json")
        return write_json(path, {"schema": f"{schema}/{SCHEMA_VERSION}", "columns": columns,
                                 "rows": [list(r) for r in rows]})
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    lines = [f"# schema={schema}/{SCHEMA_VERSION}", ",".join(columns)]
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} fields, expected {len(columns)}")
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_table(path):
    """Read a CSV written by :func:`write_table`; returns (schema, columns, float array)."""
    with open(path) as fh:
        first = fh.readline().strip()
        if not first.startswith("# schema="):
            raise ValueError(f"{path}: missing schema line")
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2,
                          converters={i: _num for i in range(len(header))})
    return first[len("# schema="):], header, data


def _num(s):
    try:
        return float(s)
    except ValueError:
        return float("nan")


def ensemble_rows(ensemble):
    """Rows (traj_index, step, t, x, y, z, r) for every stored state; r is NaN at the last step."""
    steps = ensemble.stored_steps
    for i, idx in enumerate(ensemble.indices):
        for j, step in enumerate(steps):
            x, y, z = ensemble.states[i, j]
            r = ensemble.readouts[i, j] if j < ensemble.readouts.shape[1] else float("nan")
            yield (int(idx), int(step), ensemble.times[j], x, y, z, r)


ENSEMBLE_COLUMNS = ("traj_index", "step", "t", "x", "y", "z", "r")
MEDIAN_COLUMNS = ("t", "x_med", "y_med", "z_med", "x_p40", "y_p40", "z_p40",
                  "x_p60", "y_p60", "z_p60", "r_med")
PATH_COLUMNS = ("t", "x", "y", "z", "px", "py", "pz", "r", "H")
PROFILE_COLUMNS = ("z_F", "exp_S")
PORTRAIT_COLUMNS = ("E", "branch", "theta", "p_theta")
INSTANTON_COLUMNS = ("theta", "p_exact", "p_approx")


def median_rows(mp):
    r = np.append(mp.median_readout, np.nan)
    return np.column_stack([mp.times, mp.median, mp.p40, mp.p60, r])


def path_rows(times, q, p, r, ham):
    return np.column_stack([times, q, p, r, ham])
