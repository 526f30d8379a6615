"""Uniform rectangular meshes and bilinear (Q1) finite elements.

Nodes are numbered row-major: node ``(i, j)`` has flat index ``j * nx + i``
and sits at ``(x0 + i * hx, y0 + j * hy)``.  Every assembled operator uses
2x2 Gauss quadrature per cell and 2-point Gauss quadrature per boundary edge.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

_GP = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_SNAP = 1e-9


class GridMismatchError(ValueError):
    """Raised when fields or vectors belong to different grids."""


@dataclass(frozen=True)
class RegularGrid:
    nx: int
    ny: int
    x0: float = 0.0
    y0: float = 0.0
    lx: float = 5.0
    ly: float = 5.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("node counts must be integers")
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"need at least 2 nodes per axis, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError(f"extents must be positive, got lx={self.lx}, ly={self.ly}")

    @property
    def hx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def n(self) -> int:
        return self.nx * self.ny

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.hx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.hy * np.arange(self.ny)

    @property
    def x1(self) -> float:
        return self.x0 + self.lx

    @property
    def y1(self) -> float:
        return self.y0 + self.ly

    def index(self, i: int, j: int) -> int:
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise IndexError(f"node ({i}, {j}) outside {self.nx}x{self.ny} grid")
        return j * self.nx + i

    def node(self, i: int, j: int) -> tuple[float, float]:
        self.index(i, j)
        return (self.x0 + i * self.hx, self.y0 + j * self.hy)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat x and y coordinates of all nodes."""
        X, Y = np.meshgrid(self.x, self.y)
        return X.ravel(), Y.ravel()

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros((self.ny, self.nx), dtype=bool)
        m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
        return m.ravel()

    def trapezoid_weights(self) -> np.ndarray:
        """Nodal quadrature weights; equal to the row sums of the mass matrix."""
        wx = np.full(self.nx, self.hx)
        wx[[0, -1]] *= 0.5
        wy = np.full(self.ny, self.hy)
        wy[[0, -1]] *= 0.5
        return np.outer(wy, wx).ravel()

    def contains(self, x, y, tol: float = 1e-12) -> np.ndarray:
        ex, ey = tol * self.lx, tol * self.ly
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return ((x >= self.x0 - ex) & (x <= self.x1 + ex)
                & (y >= self.y0 - ey) & (y <= self.y1 + ey))

    def locate(self, x, y):
        """Cell indices and local coordinates in [0, 1] for points in the closure."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if not np.all(self.contains(x, y)):
            bad = np.flatnonzero(~self.contains(x, y))[0]
            raise ValueError(f"point ({x[bad]}, {y[bad]}) lies outside the grid domain")
        i, s = _split(np.clip((x - self.x0) / self.hx, 0.0, self.nx - 1), self.nx)
        j, t = _split(np.clip((y - self.y0) / self.hy, 0.0, self.ny - 1), self.ny)
        return i, j, s, t

    def cells(self) -> np.ndarray:
        """(ncells, 4) node indices per cell ordered (0,0), (1,0), (0,1), (1,1)."""
        I, J = np.meshgrid(np.arange(self.nx - 1), np.arange(self.ny - 1))
        base = (J * self.nx + I).ravel()
        return np.stack([base, base + 1, base + self.nx, base + self.nx + 1], axis=1)

    def boundary_edges(self) -> list[tuple[np.ndarray, np.ndarray, float, str]]:
        """Per side: (start nodes, end nodes, edge length, side name)."""
        nx, ny = self.nx, self.ny
        bottom = np.arange(nx - 1)
        top = (ny - 1) * nx + np.arange(nx - 1)
        left = np.arange(ny - 1) * nx
        right = np.arange(ny - 1) * nx + nx - 1
        return [
            (bottom, bottom + 1, self.hx, "bottom"),
            (top, top + 1, self.hx, "top"),
            (left, left + nx, self.hy, "left"),
            (right, right + nx, self.hy, "right"),
        ]


def _split(t: np.ndarray, n: int):
    r = np.round(t)
    t = np.where(np.abs(t - r) < _SNAP, r, t)
    i = np.minimum(np.floor(t).astype(int), n - 2)
    return i, t - i


def build_grid(nx: int, ny: int, x0: float = 0.0, y0: float = 0.0,
               lx: float = 5.0, ly: float = 5.0) -> RegularGrid:
    return RegularGrid(nx, ny, x0, y0, lx, ly)


@dataclass(frozen=True, eq=False)
class NodalField:
    """Scalar field sampled at the nodes of a grid."""

    grid: RegularGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size != self.grid.n:
            raise GridMismatchError(f"field has {v.size} values, grid has {self.grid.n} nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: RegularGrid, c: float) -> "NodalField":
        return cls(grid, np.full(grid.n, float(c)))

    @classmethod
    def from_function(cls, grid: RegularGrid, f: Callable) -> "NodalField":
        X, Y = grid.coordinates()
        return cls(grid, np.broadcast_to(f(X, Y), X.shape))

    def as_array(self) -> np.ndarray:
        """Values reshaped to (ny, nx); row j holds y = y0 + j*hy."""
        return self.values.reshape(self.grid.ny, self.grid.nx)

    def with_values(self, values) -> "NodalField":
        return NodalField(self.grid, values)


def _check_grid(grid: RegularGrid, *fields: NodalField):
    for f in fields:
        if f.grid != grid:
            raise GridMismatchError(f"field on {f.grid} used with {grid}")


def _reference_cell(hx: float, hy: float):
    """Shape values and physical gradients at the 4 Gauss points."""
    s, t = np.meshgrid(_GP, _GP)
    s, t = s.ravel(), t.ravel()
    N = np.stack([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t], axis=1)
    dNs = np.stack([-(1 - t), 1 - t, -t, t], axis=1) / hx
    dNt = np.stack([-(1 - s), -s, 1 - s, s], axis=1) / hy
    w = hx * hy / 4.0
    return N, dNs, dNt, w


def _edge_shapes():
    return np.stack([1 - _GP, _GP], axis=1)  # (gauss point, local node)


def mass_matrix(grid: RegularGrid) -> sp.csr_matrix:
    """Consistent Q1 mass matrix, i.e. the matrix of f -> (int f phi_i)."""
    N, _, _, w = _reference_cell(grid.hx, grid.hy)
    local = w * N.T @ N
    cells = grid.cells()
    rows = np.repeat(cells, 4, axis=1).ravel()
    cols = np.tile(cells, (1, 4)).ravel()
    data = np.tile(local.ravel(), len(cells))
    return sp.csr_matrix((data, (rows, cols)), shape=(grid.n, grid.n))


def assemble_system(grid: RegularGrid, D: NodalField, mu: NodalField,
                    gamma: float) -> sp.csr_matrix:
    """Matrix of  int D grad u . grad phi + int mu u phi + (gamma/2) oint u phi.

    The boundary term carries gamma/2 because the Robin condition is written
    as ``2 D du/dn + gamma u = S``.
    """
    _check_grid(grid, D, mu)
    if np.any(D.values <= 0):
        raise ValueError("diffusion coefficient must be strictly positive")
    if np.any(mu.values < 0):
        raise ValueError("absorption must be nonnegative")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")

    N, dNx, dNy, w = _reference_cell(grid.hx, grid.hy)
    cells = grid.cells()
    Dq = D.values[cells] @ N.T           # (cells, gauss points)
    mq = mu.values[cells] @ N.T
    grad = np.einsum("qa,qb->qab", dNx, dNx) + np.einsum("qa,qb->qab", dNy, dNy)
    mass = np.einsum("qa,qb->qab", N, N)
    local = w * (np.einsum("cq,qab->cab", Dq, grad) + np.einsum("cq,qab->cab", mq, mass))
    rows = [np.repeat(cells, 4, axis=1).ravel()]
    cols = [np.tile(cells, (1, 4)).ravel()]
    data = [local.ravel()]

    if gamma > 0:
        E = _edge_shapes()
        for a, b, h, _ in grid.boundary_edges():
            le = 0.5 * gamma * (h / 2.0) * E.T @ E
            nodes = np.stack([a, b], axis=1)
            rows.append(np.repeat(nodes, 2, axis=1).ravel())
            cols.append(np.tile(nodes, (1, 2)).ravel())
            data.append(np.tile(le.ravel(), len(a)))

    A = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(grid.n, grid.n))
    A.sum_duplicates()
    return A


def assemble_rhs_volume(grid: RegularGrid, f: Union[NodalField, np.ndarray]) -> np.ndarray:
    """Load vector with entries int f_h phi_i, f_h the bilinear interpolant of f."""
    if isinstance(f, NodalField):
        _check_grid(grid, f)
        f = f.values
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.n,):
        raise GridMismatchError(f"load data has shape {f.shape}, expected ({grid.n},)")
    N, _, _, w = _reference_cell(grid.hx, grid.hy)
    cells = grid.cells()
    fq = f[cells] @ N.T
    local = w * fq @ N
    return np.bincount(cells.ravel(), weights=local.ravel(), minlength=grid.n)


BoundaryFunction = Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def assemble_rhs_boundary(grid: RegularGrid, S: BoundaryFunction) -> np.ndarray:
    """Load vector (1/2) oint S phi_i, with S sampled at edge Gauss points."""
    E = _edge_shapes()
    b = np.zeros(grid.n)
    X, Y = grid.coordinates()
    for a, c, h, _ in grid.boundary_edges():
        xs = X[a][:, None] + (X[c] - X[a])[:, None] * _GP[None, :]
        ys = Y[a][:, None] + (Y[c] - Y[a])[:, None] * _GP[None, :]
        Sq = np.broadcast_to(S(xs, ys) if callable(S) else float(S), xs.shape)
        local = 0.5 * (h / 2.0) * Sq @ E      # (edges, 2)
        b += np.bincount(np.concatenate([a, c]),
                         weights=np.concatenate([local[:, 0], local[:, 1]]),
                         minlength=grid.n)
    return b


def _bilinear_weights(grid: RegularGrid, x, y):
    i, j, s, t = grid.locate(x, y)
    base = j * grid.nx + i
    idx = np.stack([base, base + 1, base + grid.nx, base + grid.nx + 1], axis=1)
    wts = np.stack([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t], axis=1)
    return idx, wts


def delta_load(grid: RegularGrid, point) -> np.ndarray:
    """Nodal point-source load: entry i equals phi_i(point)."""
    idx, wts = _bilinear_weights(grid, point[0], point[1])
    b = np.zeros(grid.n)
    np.add.at(b, idx[0], wts[0])
    return b


def interpolation_matrix(grid: RegularGrid, xs, ys) -> sp.csr_matrix:
    """Sparse (npoints, nnodes) matrix of bilinear interpolation weights."""
    idx, wts = _bilinear_weights(grid, xs, ys)
    rows = np.repeat(np.arange(len(idx)), 4)
    return sp.csr_matrix((wts.ravel(), (rows, idx.ravel())), shape=(len(idx), grid.n))


def evaluate_points(field: NodalField, xs, ys) -> np.ndarray:
    idx, wts = _bilinear_weights(field.grid, xs, ys)
    return np.sum(field.values[idx] * wts, axis=1)


def evaluate(field: NodalField, point) -> float:
    """Bilinear interpolation of a nodal field at one point."""
    return float(evaluate_points(field, point[0], point[1])[0])


def nodal_gradient(field: NodalField) -> tuple[NodalField, NodalField]:
    """Central differences inside, one-sided first order on the boundary."""
    g = field.grid
    gy, gx = np.gradient(field.as_array(), g.hy, g.hx, edge_order=1)
    return NodalField(g, gx), NodalField(g, gy)


def gradient_at(field: NodalField, point) -> tuple[float, float]:
    gx, gy = nodal_gradient(field)
    return evaluate(gx, point), evaluate(gy, point)
