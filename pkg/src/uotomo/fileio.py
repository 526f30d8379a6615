"""CSV and PGM serialization of fields, measurement sets and run tables."""
from __future__ import annotations

import csv
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .forward_sim import MeasurementSet
from .grid_fem import GridMismatchError, NodalField, RegularGrid
from .optics_model import ScanGrid, UltrasoundShape

MEAS_KEYS = ("eta_x", "eta_y", "x_lo", "x_hi", "y_lo", "y_hi", "n1", "n2",
             "shape", "sigma1", "sigma2", "provenance", "alpha")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def _f(x: float) -> str:
    return f"{x:.17e}"


def _parse_float(text: str, what: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise FormatError(f"cannot parse {what} from {text!r}") from None
    if not np.isfinite(v):
        raise FormatError(f"non-finite {what}: {text!r}")
    return v


def write_field_csv(field: NodalField, path) -> Path:
    """Header ``nx,ny,x0,y0,lx,ly`` followed by one ``i,j,value`` line per node."""
    g = field.grid
    path = Path(path)
    vals = field.as_array()
    with open(path, "w", newline="") as fh:
        fh.write(f"{g.nx},{g.ny},{_f(g.x0)},{_f(g.y0)},{_f(g.lx)},{_f(g.ly)}\n")
        for j in range(g.ny):
            fh.writelines(f"{i},{j},{_f(vals[j, i])}\n" for i in range(g.nx))
    return path


def read_field_csv(path, grid: Optional[RegularGrid] = None) -> NodalField:
    """Inverse of ``write_field_csv``; ``grid`` (if given) must match the header."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) != 6:
        raise FormatError(f"{path}: header must be nx,ny,x0,y0,lx,ly")
    try:
        nx, ny = int(rows[0][0]), int(rows[0][1])
    except ValueError:
        raise FormatError(f"{path}: node counts must be integers") from None
    x0, y0, lx, ly = (_parse_float(t, "grid extent") for t in rows[0][2:])
    try:
        g = RegularGrid(nx, ny, x0, y0, lx, ly)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if grid is not None and grid != g:
        raise GridMismatchError(f"{path}: file grid {g} differs from expected {grid}")
    data = rows[1:]
    if len(data) != g.n:
        raise FormatError(f"{path}: expected {g.n} data rows, found {len(data)}")
    vals = np.empty((ny, nx))
    seen = np.zeros((ny, nx), dtype=bool)
    for k, row in enumerate(data):
        if len(row) != 3:
            raise FormatError(f"{path}: row {k + 2} must have 3 columns")
        try:
            i, j = int(row[0]), int(row[1])
        except ValueError:
            raise FormatError(f"{path}: row {k + 2} has non-integer indices") from None
        if not (0 <= i < nx and 0 <= j < ny) or seen[j, i]:
            raise FormatError(f"{path}: row {k + 2} has invalid or duplicate node ({i}, {j})")
        vals[j, i] = _parse_float(row[2], "field value")
        seen[j, i] = True
    return NodalField(g, vals)


def write_measurements_csv(meas: MeasurementSet, path) -> Path:
    s = meas.scan
    header = dict(eta_x=_f(meas.eta[0]), eta_y=_f(meas.eta[1]),
                  x_lo=_f(s.x_lo), x_hi=_f(s.x_hi), y_lo=_f(s.y_lo), y_hi=_f(s.y_hi),
                  n1=str(s.n1), n2=str(s.n2), shape=meas.shape.label(),
                  sigma1=_f(meas.shape.sigma1), sigma2=_f(meas.shape.sigma2),
                  provenance=meas.provenance, alpha=_f(meas.alpha))
    path = Path(path)
    foci = s.foci()
    with open(path, "w", newline="") as fh:
        fh.write(",".join(MEAS_KEYS) + "\n")
        fh.write(",".join(header[k] for k in MEAS_KEYS) + "\n")
        fh.write("i,xi_x,xi_y,h\n")
        for k, (xy, h) in enumerate(zip(foci, meas.values)):
            fh.write(f"{k},{_f(xy[0])},{_f(xy[1])},{_f(h)}\n")
    return path


def read_measurements_csv(path) -> MeasurementSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise FormatError(f"{path}: truncated measurement file")
    keys, vals = rows[0], rows[1]
    if len(keys) != len(vals):
        raise FormatError(f"{path}: header has {len(keys)} keys but {len(vals)} values")
    head = dict(zip(keys, vals))
    missing = [k for k in MEAS_KEYS if k not in head]
    if missing:
        raise FormatError(f"{path}: header lacks {', '.join(missing)}")
    num = {k: _parse_float(head[k], k) for k in
           ("eta_x", "eta_y", "x_lo", "x_hi", "y_lo", "y_hi", "sigma1", "sigma2", "alpha")}
    try:
        n1, n2 = int(head["n1"]), int(head["n2"])
    except ValueError:
        raise FormatError(f"{path}: scan counts must be integers") from None
    if head["shape"] == "perfect":
        shape = UltrasoundShape.point()
    elif head["shape"] == "gaussian":
        shape = UltrasoundShape(num["sigma1"], num["sigma2"])
    else:
        raise FormatError(f"{path}: unknown ultrasound shape {head['shape']!r}")
    scan = ScanGrid(num["x_lo"], num["x_hi"], num["y_lo"], num["y_hi"], n1, n2)
    if rows[2] != ["i", "xi_x", "xi_y", "h"]:
        raise FormatError(f"{path}: expected column line i,xi_x,xi_y,h")
    data = rows[3:]
    if len(data) != scan.size:
        raise FormatError(f"{path}: expected {scan.size} measurement rows, found {len(data)}")
    h = np.empty(scan.size)
    for k, row in enumerate(data):
        if len(row) != 4 or row[0] != str(k):
            raise FormatError(f"{path}: malformed measurement row {k + 4}")
        h[k] = _parse_float(row[3], "measurement")
    return MeasurementSet(scan, (num["eta_x"], num["eta_y"]), h, head["provenance"] or
                          "loaded-from-file", shape, num["alpha"])


def write_table_csv(path, columns: Sequence[str], rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else
                              (str(v) if isinstance(v, (int, np.integer)) else _f(v))
                              for v in row) + "\n")
    return path


def write_pgm(field: NodalField, path, vrange: Optional[tuple[float, float]] = None) -> Path:
    """16-bit binary PGM; the top image row is the largest y.

    Values map linearly from ``vrange`` (default: the field's min and max) to
    0..65535, clipping outside the range.  A constant field becomes mid-gray.
    """
    a = np.flipud(field.as_array())
    lo, hi = (a.min(), a.max()) if vrange is None else map(float, vrange)
    if hi <= lo:
        warnings.warn("degenerate value range; writing uniform mid-gray", stacklevel=2)
        img = np.full(a.shape, 32768, dtype=">u2")
    else:
        img = np.round(np.clip((a - lo) / (hi - lo), 0.0, 1.0) * 65535).astype(">u2")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n65535\n".encode("ascii"))
        fh.write(img.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    """Pixel array of a file written by ``write_pgm``."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise FormatError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2").reshape(h, w)
