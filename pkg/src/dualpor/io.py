"""Deterministic text output: CSV series and legacy-VTK structured points."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.17g"


def fmt(x) -> str:
    if isinstance(x, (str, bytes)):
        return str(x)
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return FLOAT_FMT % float(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:] if line]
    return header, rows


def write_vtk(path, fields: dict, shape, spacing, point_data=False, title="dualpor field") -> Path:
    """Legacy ASCII structured points; fields are C-ordered arrays of ``shape``.

    With ``point_data`` the values sit on the grid vertices (periodic nodal
    fields), otherwise on the cells.
    """
    path = Path(path)
    d = len(shape)
    shape3 = tuple(shape) + (1,) * (3 - d)
    spacing3 = tuple(spacing) + (1.0,) * (3 - d)
    dims = shape3 if point_data else tuple(k + 1 if i < d else 1 for i, k in enumerate(shape3))
    n_values = int(np.prod(shape))
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS " + " ".join(str(k) for k in dims),
        "ORIGIN 0 0 0",
        "SPACING " + " ".join(fmt(v) for v in spacing3),
        f"{'POINT' if point_data else 'CELL'}_DATA {n_values}",
    ]
    for name, values in fields.items():
        # VTK runs x fastest
        flat = np.asarray(values, dtype=float).reshape(shape).ravel(order="F")
        out.append(f"SCALARS {name} double 1")
        out.append("LOOKUP_TABLE default")
        out.extend(fmt(x) for x in flat)
    path.write_text("\n".join(out) + "\n")
    return path


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
