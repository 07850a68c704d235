"""CSV and JSON writers.

CSV files are comma separated with ``#``-prefixed metadata lines on top and
numbers printed with 12 significant digits. JSON keeps insertion order, which
the producers fix, so identical inputs give byte-identical files. Every file
is written to a temporary sibling first and then renamed into place, so a
failed run never leaves a partial file behind.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np
import scipy

from . import __version__

SIG_DIGITS = 12


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    out = f"{x:.{SIG_DIGITS}g}"
    return "0" if out == "-0" else out


def versions() -> dict:
    return {"crwfisher": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


def header(meta: dict) -> str:
    """One ``# key: value`` line per entry, values as compact JSON."""
    return "".join(f"# {k}: {json.dumps(_jsonable(v), separators=(',', ':'))}\n" for k, v in meta.items())


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _table(meta: dict, columns, rows) -> str:
    lines = [header(meta), ",".join(columns) + "\n"]
    lines.extend(",".join(fmt(v) if not isinstance(v, str) else v for v in row) + "\n" for row in rows)
    return "".join(lines)


TRAJECTORY_COLUMNS = ("t", "re_rho_pp", "im_rho_pp", "re_rho_pm", "im_rho_pm", "re_rho_mp", "im_rho_mp",
                      "re_rho_mm", "im_rho_mm", "r_x", "r_y", "r_z")


def trajectory_csv(traj, meta: dict) -> str:
    rho = traj.states.reshape(-1, 4)
    r = traj.bloch
    rows = []
    for t, entries, b in zip(traj.times, rho, r):
        row = [t]
        for z in entries:
            row += [z.real, z.imag]
        rows.append(row + list(b))
    return _table(meta, TRAJECTORY_COLUMNS, rows)


def fisher_csv(series, meta: dict) -> str:
    rows = ([t, fc, fq, "floored" if flag else ""]
            for t, fc, fq, flag in zip(series.times, series.cfi, series.qfi, series.flags))
    return _table(meta, ("t", "F_C", "F_Q", "flags"), rows)


def to_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, ensure_ascii=False) + "\n"


SWEEP_COLUMNS = ("chi", "gamma_cm1", "lambda_over_gamma", "bath", "max_FQ", "argmax_t_FQ", "max_FC", "argmax_t_FC",
                 "max_FQ_rwa", "argmax_t_FQ_rwa", "max_FC_rwa", "argmax_t_FC_rwa",
                 "delta_FQ", "delta_FC", "R_Q", "R_C", "flags", "status", "error")


def sweep_csv(rows: list[dict], meta: dict) -> str:
    out = []
    for row in rows:
        cells = []
        for col in SWEEP_COLUMNS:
            v = row.get(col)
            if v is None:
                cells.append("")
            elif col == "flags":
                cells.append(";".join(v))
            elif col == "error":
                cells.append('"' + str(v).replace('"', "'") + '"')
            elif isinstance(v, str):
                cells.append(v)
            else:
                cells.append(fmt(v))
        out.append(cells)
    return _table(meta, SWEEP_COLUMNS, out)
