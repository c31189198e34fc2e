"""CSV and JSON persistence.

Fields are written as ``x[,y],value`` with 17 significant digits in
row-major (C) order of the interior nodes, so reading a file back gives the
exact doubles that were written.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .mesh import Grid, build_grid

__all__ = [
    "fmt",
    "write_csv",
    "read_csv",
    "write_field",
    "read_field",
    "write_sets",
    "write_history",
    "write_manifest",
    "read_manifest",
]


def fmt(x) -> str:
    return format(float(x), ".17g")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_field(path, grid: Grid, values) -> Path:
    values = np.asarray(values, dtype=float)
    grid.check(values)
    coords = grid.coords()
    header = ["x", "value"] if grid.dim == 1 else ["x", "y", "value"]
    rows = zip(*coords, values)
    return write_csv(path, header, rows)


def read_field(path) -> tuple[Grid, np.ndarray]:
    """Inverse of :func:`write_field`; the grid is recovered from the coordinates."""
    header, rows = read_csv(path)
    data = np.array([[float(c) for c in r] for r in rows]) if rows else np.zeros((0, len(header)))
    if header == ["x", "value"]:
        dim = 1
    elif header == ["x", "y", "value"]:
        dim = 2
    else:
        raise ValueError(f"{path}: not a field CSV (header {header})")
    x = data[:, 0]
    n = len(np.unique(x)) if dim == 2 else len(x)
    if n < 1 or data.shape[0] != n**dim:
        raise ValueError(f"{path}: {data.shape[0]} rows do not form a {dim}D grid")
    h = float(np.min(x))
    grid = build_grid(dim, n, h * (n + 1))
    return grid, data[:, -1].copy()


def write_sets(path, sets) -> Path:
    rows = zip(range(sets.active.size), sets.active, sets.biactive)
    return write_csv(path, ["node", "active", "biactive"], rows)


def write_history(path, history) -> Path:
    rows = ((r.gamma, r.iteration, r.J, r.gradient_norm, r.step) for r in history.rows)
    return write_csv(path, ["gamma", "iteration", "J", "gradient_norm", "step"], rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_manifest(path, data: dict) -> Path:
    """Write JSON atomically: a temporary file in the same directory is renamed over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
