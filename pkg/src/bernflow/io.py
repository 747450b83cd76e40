"""Atomic CSV and PGM writers for ledgers, fields, masks and traces."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from bernflow.grid import RegionMask, ScalarField


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def fmt(value) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return atomic_write_text(path, csv_text(header, rows))


def _index_header(ndim: int) -> list[str]:
    return ["i", "j", "k"][:ndim]


def write_field_csv(path, field: ScalarField) -> Path:
    vals = field.values
    idx = np.indices(vals.shape).reshape(vals.ndim, -1).T
    rows = ((*map(int, ix), v) for ix, v in zip(idx, vals.ravel()))
    return write_csv(path, _index_header(vals.ndim) + ["value"], rows)


def write_mask_csv(path, mask: RegionMask) -> Path:
    vals = mask.inside
    idx = np.indices(vals.shape).reshape(vals.ndim, -1).T
    rows = ((*map(int, ix), int(v)) for ix, v in zip(idx, vals.ravel()))
    return write_csv(path, _index_header(vals.ndim) + ["inside"], rows)


def pgm_text(mask: RegionMask) -> str:
    """Plain PGM (P2): 255 inside, 0 outside; 3D masks are written as stacked slices."""
    arr = mask.inside
    if arr.ndim == 3:
        arr = arr.reshape(arr.shape[0] * arr.shape[1], arr.shape[2])
    # rows of the image run along the second axis, top row = largest y
    img = np.flipud(arr.T).astype(int) * 255
    lines = ["P2", f"{img.shape[1]} {img.shape[0]}", "255"]
    lines += [" ".join(map(str, row)) for row in img]
    return "\n".join(lines) + "\n"


def write_pgm(path, mask: RegionMask) -> Path:
    return atomic_write_text(path, pgm_text(mask))


def read_pgm(path) -> np.ndarray:
    tokens = Path(path).read_text().split()
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM file")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.array(tokens[4 : 4 + w * h], dtype=int).reshape(h, w)
    return data


def write_trace_csv(path, points: np.ndarray, values: np.ndarray, name: str = "value") -> Path:
    ndim = points.shape[1]
    header = ["x", "y", "z"][:ndim] + [name]
    return write_csv(path, header, ((*p, v) for p, v in zip(points, values)))
