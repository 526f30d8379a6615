"""Forward model: incident light u, modulated light v and the measurements h(xi).

Two measurement paths are provided.  ``measure_direct`` solves one modulated
problem per focus and reads off v at the detector.  ``measure_adjoint`` solves
a single problem with a point source at the detector and obtains every
measurement as a weighted integral of that solution against |p|^2 u.  Both
evaluate the same bilinear form of the inverse system matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid_fem import (NodalField, RegularGrid, assemble_rhs_boundary,
                       assemble_rhs_volume, assemble_system, delta_load, evaluate,
                       evaluate_points, mass_matrix)
from .optics_model import (DETECTOR, OpticalCoefficients, ScanGrid, UltrasoundShape,
                           _axis_profiles, diffusion_coefficient, gaussian_intensity)
from .sparse_solver import DEFAULT_TOL, solve_or_raise

EDGES = ("left", "right", "bottom", "top")


class PositivityError(ValueError):
    """A field that the model requires to be positive is not."""


@dataclass(frozen=True)
class SourceSpec:
    """Constant boundary illumination on a set of domain edges."""

    edges: tuple[str, ...] = ("left",)
    strength: float = 1.0

    def __post_init__(self):
        edges = tuple(self.edges)
        if not edges or any(e not in EDGES for e in edges):
            raise ValueError(f"source edges must be a nonempty subset of {EDGES}, got {edges}")
        if not self.strength > 0:
            raise ValueError("source strength must be positive")
        object.__setattr__(self, "edges", edges)

    def boundary_function(self, grid: RegularGrid):
        tx, ty = 1e-12 * grid.lx, 1e-12 * grid.ly
        s = self.strength
        edges = self.edges

        def S(x, y):
            on = np.zeros(np.shape(x), dtype=bool)
            if "left" in edges:
                on |= np.abs(x - grid.x0) <= tx
            if "right" in edges:
                on |= np.abs(x - grid.x1) <= tx
            if "bottom" in edges:
                on |= np.abs(y - grid.y0) <= ty
            if "top" in edges:
                on |= np.abs(y - grid.y1) <= ty
            return np.where(on, s, 0.0)

        return S


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    scan: ScanGrid
    eta: tuple[float, float]
    values: np.ndarray = field(repr=False)
    provenance: str = "direct"
    shape: UltrasoundShape = UltrasoundShape()
    alpha: float = 1.0
    solves: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size != self.scan.size:
            raise ValueError(f"{v.size} values for a scan of {self.scan.size} foci")
        if not np.all(np.isfinite(v)):
            raise ValueError("measurements must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "eta", tuple(map(float, self.eta)))

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.scan.n2, self.scan.n1)

    def scaled(self, c: float) -> "MeasurementSet":
        return _replace(self, values=c * self.values)


def _replace(meas: MeasurementSet, **kw) -> MeasurementSet:
    args = dict(scan=meas.scan, eta=meas.eta, values=meas.values, provenance=meas.provenance,
                shape=meas.shape, alpha=meas.alpha, solves=meas.solves)
    args.update(kw)
    return MeasurementSet(**args)


def _system(coeffs: OpticalCoefficients, grid: RegularGrid, D: Optional[NodalField]):
    if coeffs.grid != grid:
        raise ValueError("coefficients and simulation grid differ")
    D = diffusion_coefficient(coeffs) if D is None else D
    return assemble_system(grid, D, coeffs.mu, coeffs.gamma)


def solve_incident(coeffs: OpticalCoefficients, src: SourceSpec,
                   grid: Optional[RegularGrid] = None, D: Optional[NodalField] = None,
                   tol: float = DEFAULT_TOL, A=None) -> NodalField:
    """Incident fluence: -div(D grad u) + mu u = 0 with 2 D du/dn + gamma u = S."""
    grid = coeffs.grid if grid is None else grid
    A = _system(coeffs, grid, D) if A is None else A
    b = assemble_rhs_boundary(grid, src.boundary_function(grid))
    u = solve_or_raise(A, b, tol=tol)
    if np.any(b) and np.any(u <= 0):
        raise PositivityError(f"incident field has {np.sum(u <= 0)} nonpositive nodes")
    return NodalField(grid, u)


def solve_modulated(coeffs: OpticalCoefficients, u: NodalField, p_sq: NodalField,
                    grid: Optional[RegularGrid] = None, alpha: float = 1.0,
                    D: Optional[NodalField] = None, tol: float = DEFAULT_TOL,
                    A=None) -> NodalField:
    """Modulated fluence with source alpha |p|^2 u and homogeneous Robin data."""
    grid = coeffs.grid if grid is None else grid
    if u.grid != grid or p_sq.grid != grid:
        raise ValueError("u, |p|^2 and the simulation grid must coincide")
    A = _system(coeffs, grid, D) if A is None else A
    b = alpha * assemble_rhs_volume(grid, p_sq.values * u.values)
    return NodalField(grid, solve_or_raise(A, b, tol=tol))


def measure_direct(coeffs: OpticalCoefficients, src: SourceSpec, scan: ScanGrid,
                   shape: UltrasoundShape, eta=DETECTOR, grid: Optional[RegularGrid] = None,
                   alpha: float = 1.0, D: Optional[NodalField] = None,
                   tol: float = DEFAULT_TOL) -> MeasurementSet:
    """One modulated solve per focus, evaluated at the detector."""
    grid = coeffs.grid if grid is None else grid
    A = _system(coeffs, grid, D)
    u = solve_incident(coeffs, src, grid, A=A, tol=tol)
    foci = scan.foci()
    h = np.empty(len(foci))
    for k, xi in enumerate(foci):
        if shape.perfect:
            b = alpha * evaluate(u, xi) * delta_load(grid, xi)
            v = NodalField(grid, solve_or_raise(A, b, tol=tol))
        else:
            v = solve_modulated(coeffs, u, gaussian_intensity(grid, xi, shape), grid,
                                alpha=alpha, A=A, tol=tol)
        h[k] = evaluate(v, eta)
    return MeasurementSet(scan, eta, h, "direct", shape, alpha, solves=1 + len(foci))


def adjoint_measurements(grid: RegularGrid, u: NodalField, w: NodalField, scan: ScanGrid,
                         shape: UltrasoundShape, alpha: float = 1.0) -> np.ndarray:
    """h(xi) = alpha * int w |p^xi|^2 u, with w the detector Green's function."""
    if shape.perfect:
        foci = scan.foci()
        return alpha * evaluate_points(w, foci[:, 0], foci[:, 1]) \
            * evaluate_points(u, foci[:, 0], foci[:, 1])
    # int_h (p^2 u)_h w_h = w^T M (p^2 u); |p|^2 is separable so all foci at once
    z = ((mass_matrix(grid) @ w.values) * u.values).reshape(grid.ny, grid.nx)
    gx, gy = _axis_profiles(grid, scan.xs, scan.ys, shape)
    return alpha * (gy @ z @ gx.T).ravel()


def measure_adjoint(coeffs: OpticalCoefficients, src: SourceSpec, scan: ScanGrid,
                    shape: UltrasoundShape, eta=DETECTOR, grid: Optional[RegularGrid] = None,
                    alpha: float = 1.0, D: Optional[NodalField] = None,
                    tol: float = DEFAULT_TOL) -> MeasurementSet:
    """All measurements from the incident field and one detector solve."""
    grid = coeffs.grid if grid is None else grid
    A = _system(coeffs, grid, D)
    u = solve_incident(coeffs, src, grid, A=A, tol=tol)
    w = NodalField(grid, solve_or_raise(A, delta_load(grid, eta), tol=tol))
    h = adjoint_measurements(grid, u, w, scan, shape, alpha)
    return MeasurementSet(scan, eta, h, "adjoint", shape, alpha, solves=2)


def add_noise(meas: MeasurementSet, relative_level: float, seed: int = 0) -> MeasurementSet:
    """Multiplicative Gaussian noise h_i (1 + level z_i), deterministic per seed."""
    if relative_level < 0:
        raise ValueError("noise level must be nonnegative")
    if relative_level == 0:
        return meas
    z = np.random.default_rng(seed).standard_normal(meas.values.size)
    return _replace(meas, values=meas.values * (1.0 + relative_level * z))
