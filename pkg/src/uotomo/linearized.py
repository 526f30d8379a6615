"""Discrete versions of the linearized operators K1, K2 and F = 1 - K1 - K2.

Around a background absorption mu0 (with the diffusion coefficient frozen at
D0 = 1 / (3 mus')) a first-order absorption perturbation mu1 and the induced
measurement perturbation h1 are related by

    F mu1 = -(1 / (2 u0)) [-div D0 grad + mu0] (h1 / (alpha G0_eta)),

with

    K1 g = A * phi(g),      A = -(1 / (2 u0)) [-div D0 grad](u0 / G0_eta),
    K2 g = B . grad phi(g), B = (D0 / u0) grad(u0 / G0_eta),
    phi(g)(xi) = int_U G0(xi, z) G0_eta(z) g(z) dz.

phi is computed by one PDE solve with source G0_eta g.  Operators act on
nodal fields supported on the grid nodes inside the closed rectangle U; the
nodes of U not on its outer ring form the interior lattice on which the
equation is checked.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .forward_sim import SourceSpec
from .grid_fem import (NodalField, RegularGrid, assemble_rhs_boundary,
                       assemble_rhs_volume, assemble_system, delta_load, mass_matrix,
                       nodal_gradient)
from .greens import snap_to_boundary
from .optics_model import DETECTOR, GAMMA, MUS_PRIME, SCAN_REGION
from .recon import fd_elliptic_on_scan
from .sparse_solver import solve_or_raise

LIN_TOL = 1e-12


class LinearizationError(ValueError):
    """The background violates the positivity the linearization relies on."""


@dataclass(frozen=True, eq=False)
class LinearizedContext:
    grid: RegularGrid
    mu0: NodalField
    D0: float
    gamma: float
    alpha: float
    eta: tuple[float, float]
    src: SourceSpec
    u0: NodalField
    G0: NodalField
    A: NodalField
    Bx: NodalField
    By: NodalField
    in_U: np.ndarray          # node mask of the closed region U
    lattice_shape: tuple[int, int]
    u_min: float
    g_min: float
    system: sp.csr_matrix
    mass: sp.csr_matrix
    tol: float = LIN_TOL

    @property
    def interior(self) -> np.ndarray:
        """Node mask of U without its outer ring of nodes."""
        n2, n1 = self.lattice_shape
        m = np.zeros((n2, n1), dtype=bool)
        m[1:-1, 1:-1] = True
        out = np.zeros(self.grid.n, dtype=bool)
        out[np.flatnonzero(self.in_U)[m.ravel()]] = True
        return out

    def on_lattice(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.in_U].reshape(self.lattice_shape)

    def from_lattice(self, lattice: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.n)
        out[self.in_U] = np.ravel(lattice)
        return out

    def solve(self, b: np.ndarray) -> np.ndarray:
        return solve_or_raise(self.system, b, tol=self.tol)


def region_mask(grid: RegularGrid, U) -> tuple[np.ndarray, tuple[int, int]]:
    x_lo, x_hi, y_lo, y_hi = U
    ex, ey = 1e-9 * grid.hx, 1e-9 * grid.hy
    ix = (grid.x >= x_lo - ex) & (grid.x <= x_hi + ex)
    iy = (grid.y >= y_lo - ey) & (grid.y <= y_hi + ey)
    if ix[0] or ix[-1] or iy[0] or iy[-1]:
        raise ValueError("U must lie strictly inside the grid domain")
    if ix.sum() < 3 or iy.sum() < 3:
        raise ValueError("U must contain at least 3x3 grid nodes")
    return np.outer(iy, ix).ravel(), (int(iy.sum()), int(ix.sum()))


def build_context(mu0: NodalField, src: SourceSpec = SourceSpec(), eta=DETECTOR,
                  grid: Optional[RegularGrid] = None, U=SCAN_REGION,
                  mus_prime: float = MUS_PRIME, gamma: float = GAMMA,
                  alpha: float = 1.0, tol: float = LIN_TOL) -> LinearizedContext:
    """Background fields and the multiplier fields A, B of K1 and K2."""
    grid = mu0.grid if grid is None else grid
    if np.any(mu0.values <= 0):
        raise ValueError("background absorption must be positive")
    D0 = 1.0 / (3.0 * mus_prime)
    in_U, shape = region_mask(grid, U)
    A0 = assemble_system(grid, NodalField.constant(grid, D0), mu0, gamma)
    u0 = solve_or_raise(A0, assemble_rhs_boundary(grid, src.boundary_function(grid)), tol=tol)
    snapped, _ = snap_to_boundary(grid, eta)
    G0 = solve_or_raise(A0, delta_load(grid, snapped), tol=tol)

    u_min, g_min = float(u0[in_U].min()), float(G0[in_U].min())
    if u_min <= 0 or g_min <= 0:
        raise LinearizationError(f"min u0 = {u_min:.3e}, min G0 = {g_min:.3e} on U; "
                                 "both must be positive")

    ratio = NodalField(grid, u0 / G0)
    lap = fd_elliptic_on_scan(ratio.as_array(), D0, grid.hx, grid.hy).ravel()
    A = np.where(in_U, -lap / (2.0 * u0), 0.0)
    gx, gy = nodal_gradient(ratio)
    Bx = np.where(in_U, D0 * gx.values / u0, 0.0)
    By = np.where(in_U, D0 * gy.values / u0, 0.0)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(Bx)) and np.all(np.isfinite(By))):
        raise LinearizationError("non-finite multiplier fields on U")

    return LinearizedContext(grid, mu0, D0, gamma, alpha, snapped, src,
                             NodalField(grid, u0), NodalField(grid, G0),
                             NodalField(grid, A), NodalField(grid, Bx), NodalField(grid, By),
                             in_U, shape, u_min, g_min, A0, mass_matrix(grid), tol)


def _values(ctx: LinearizedContext, g) -> np.ndarray:
    v = g.values if isinstance(g, NodalField) else np.asarray(g, dtype=float)
    if v.shape != (ctx.grid.n,):
        raise ValueError(f"expected {ctx.grid.n} nodal values, got shape {v.shape}")
    # the operators act on densities over U; anything outside is dropped
    return np.where(ctx.in_U, v, 0.0)


def potential_from_density(ctx: LinearizedContext, g) -> NodalField:
    """phi solving -div D0 grad phi + mu0 phi = G0_eta g, homogeneous Robin data."""
    v = _values(ctx, g)
    if not np.any(v):
        return NodalField.constant(ctx.grid, 0.0)
    return NodalField(ctx.grid, ctx.solve(assemble_rhs_volume(ctx.grid, ctx.G0.values * v)))


def apply_K1(ctx: LinearizedContext, g) -> NodalField:
    phi = potential_from_density(ctx, g)
    return NodalField(ctx.grid, ctx.A.values * phi.values)


def apply_K2(ctx: LinearizedContext, g) -> NodalField:
    gx, gy = nodal_gradient(potential_from_density(ctx, g))
    return NodalField(ctx.grid, ctx.Bx.values * gx.values + ctx.By.values * gy.values)


def apply_F(ctx: LinearizedContext, g) -> NodalField:
    v = _values(ctx, g)
    phi = potential_from_density(ctx, v)
    gx, gy = nodal_gradient(phi)
    k = ctx.A.values * phi.values + ctx.Bx.values * gx.values + ctx.By.values * gy.values
    return NodalField(ctx.grid, np.where(ctx.in_U, v - k, 0.0))


def _gradient_matrices(grid: RegularGrid):
    """Sparse matrices reproducing ``nodal_gradient``."""
    def d1(n, h):
        m = sp.lil_matrix((n, n))
        m[0, 0], m[0, 1] = -1.0 / h, 1.0 / h
        m[n - 1, n - 2], m[n - 1, n - 1] = -1.0 / h, 1.0 / h
        for i in range(1, n - 1):
            m[i, i - 1], m[i, i + 1] = -0.5 / h, 0.5 / h
        return m.tocsr()

    Dx = sp.kron(sp.identity(grid.ny), d1(grid.nx, grid.hx), format="csr")
    Dy = sp.kron(d1(grid.ny, grid.hy), sp.identity(grid.nx), format="csr")
    return Dx, Dy


def F_operator(ctx: LinearizedContext) -> LinearOperator:
    """F and its Euclidean adjoint as a LinearOperator on the nodes of U."""
    idx = np.flatnonzero(ctx.in_U)
    n = idx.size
    Dx, Dy = _gradient_matrices(ctx.grid)
    M, G = ctx.mass, ctx.G0.values
    A, Bx, By = ctx.A.values, ctx.Bx.values, ctx.By.values

    def extend(z):
        out = np.zeros(ctx.grid.n)
        out[idx] = z
        return out

    def matvec(z):
        return apply_F(ctx, extend(np.ravel(z))).values[idx]

    def rmatvec(z):
        z = np.ravel(z)
        y = extend(A[idx] * z) + Dx.T @ extend(Bx[idx] * z) + Dy.T @ extend(By[idx] * z)
        return z - (G * (M @ ctx.solve(y)))[idx]

    return LinearOperator((n, n), matvec=matvec, rmatvec=rmatvec, dtype=float)


def solve_F_least_squares(ctx: LinearizedContext, rhs, rtol: float = 1e-8,
                          maxiter: int = 500) -> tuple[NodalField, int]:
    """Minimize ||F m - rhs|| by conjugate gradients on the normal equations."""
    F = F_operator(ctx)
    idx = np.flatnonzero(ctx.in_U)
    b = _values(ctx, rhs)[idx]
    normal = LinearOperator(F.shape, matvec=lambda z: F.rmatvec(F.matvec(z)), dtype=float)
    m, info = cg(normal, F.rmatvec(b), rtol=rtol, maxiter=maxiter)
    out = np.zeros(ctx.grid.n)
    out[idx] = m
    return NodalField(ctx.grid, out), info


def rhs_from_measurement(ctx: LinearizedContext, h1: np.ndarray) -> np.ndarray:
    """-(1/(2 u0)) [-div D0 grad + mu0] (h1 / (alpha G0)) on the U lattice.

    ``h1`` has the lattice shape of U; the outer ring is returned as NaN.
    """
    h1 = np.asarray(h1, dtype=float).reshape(ctx.lattice_shape)
    q = h1 / (ctx.alpha * ctx.on_lattice(ctx.G0.values))
    Lq = fd_elliptic_on_scan(q, ctx.D0, ctx.grid.hx, ctx.grid.hy) + ctx.on_lattice(ctx.mu0.values) * q
    return -Lq / (2.0 * ctx.on_lattice(ctx.u0.values))


def point_focus_data(ctx: LinearizedContext, mu: NodalField) -> np.ndarray:
    """h(xi) = alpha G(eta, xi) u(xi) at the U nodes, with D frozen at D0."""
    grid = ctx.grid
    A = assemble_system(grid, NodalField.constant(grid, ctx.D0), mu, ctx.gamma)
    u = solve_or_raise(A, assemble_rhs_boundary(grid, ctx.src.boundary_function(grid)),
                       tol=ctx.tol)
    G = solve_or_raise(A, delta_load(grid, ctx.eta), tol=ctx.tol)
    return ctx.alpha * ctx.on_lattice(G * u)


def first_order_data(ctx: LinearizedContext, mu1) -> np.ndarray:
    """h1 = alpha (G1 u0 + G0 u1) on the U nodes from the first-order equations.

    u1 and G1 solve the background problem with the volume source -mu1 times
    u0 and G0 respectively.
    """
    v = _values(ctx, mu1)
    u1 = ctx.solve(-(ctx.mass @ (v * ctx.u0.values)))
    G1 = ctx.solve(-(ctx.mass @ (v * ctx.G0.values)))
    return ctx.alpha * ctx.on_lattice(G1 * ctx.u0.values + ctx.G0.values * u1)


def weighted_norm(ctx: LinearizedContext, values: np.ndarray, mask: np.ndarray) -> float:
    """Discrete L2 norm with nodal area weights over the masked nodes."""
    w = ctx.grid.trapezoid_weights()
    v = np.asarray(values)
    return float(np.sqrt(np.sum(w[mask] * v[mask] ** 2)))


def first_order_residual(ctx: LinearizedContext, mu1) -> float:
    """Like ``consistency_residual`` with h1 from ``first_order_data`` (the eps -> 0 limit)."""
    v = _values(ctx, mu1)
    denom = weighted_norm(ctx, v, ctx.interior)
    if denom == 0:
        return 0.0
    rhs = ctx.from_lattice(np.nan_to_num(rhs_from_measurement(ctx, first_order_data(ctx, v))))
    return weighted_norm(ctx, apply_F(ctx, v).values - rhs, ctx.interior) / denom


def consistency_residual(ctx: LinearizedContext, mu1, eps_list: Sequence[float]) -> np.ndarray:
    """r(eps) = ||F mu1 - rhs(h1_eps)|| / ||mu1|| on the interior lattice.

    h1_eps is the forward difference (h(mu0 + eps mu1) - h(mu0)) / eps of the
    nonlinear point-focus measurements.
    """
    v = _values(ctx, mu1)
    inner = ctx.interior
    denom = weighted_norm(ctx, v, inner)
    if denom == 0:
        return np.zeros(len(eps_list))
    Fmu = apply_F(ctx, v).values
    h0 = point_focus_data(ctx, ctx.mu0)
    out = []
    for eps in eps_list:
        mu = ctx.mu0.values + eps * v
        if np.any(mu <= 0):
            raise ValueError(f"eps={eps} makes the absorption nonpositive")
        h1 = (point_focus_data(ctx, NodalField(ctx.grid, mu)) - h0) / eps
        rhs = ctx.from_lattice(np.nan_to_num(rhs_from_measurement(ctx, h1)))
        out.append(weighted_norm(ctx, Fmu - rhs, inner) / denom)
    return np.array(out)


def oscillatory_density(ctx: LinearizedContext, k: int, U=SCAN_REGION) -> NodalField:
    """sin(k pi (x - x_lo)/w) sin(k pi (y - y_lo)/h) on U, zero elsewhere."""
    x_lo, x_hi, y_lo, y_hi = U
    X, Y = ctx.grid.coordinates()
    g = np.sin(k * np.pi * (X - x_lo) / (x_hi - x_lo)) * np.sin(k * np.pi * (Y - y_lo) / (y_hi - y_lo))
    return NodalField(ctx.grid, np.where(ctx.in_U, g, 0.0))


def compactness_probe(ctx: LinearizedContext, ks: Sequence[int] = (1, 2, 4, 8),
                      U=SCAN_REGION) -> dict[str, np.ndarray]:
    """Ratios ||K g_k|| / ||g_k|| for oscillatory densities g_k."""
    r1, r2 = [], []
    for k in ks:
        g = oscillatory_density(ctx, k, U)
        ng = weighted_norm(ctx, g.values, ctx.in_U)
        r1.append(weighted_norm(ctx, apply_K1(ctx, g).values, ctx.in_U) / ng)
        r2.append(weighted_norm(ctx, apply_K2(ctx, g).values, ctx.in_U) / ng)
    return {"k": np.array(ks), "K1": np.array(r1), "K2": np.array(r2)}
