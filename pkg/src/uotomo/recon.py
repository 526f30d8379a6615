"""Fixed-point reconstruction of the absorption coefficient from scan data.

With a perfectly focused ultrasound beam the measurements satisfy
h(xi) = alpha G(eta, xi) u(xi), so u is known on the scan lattice up to the
factor alpha once G is.  Inserting u = h / (alpha G) into the diffusion
equation gives

    mu(xi) = [div D grad](h / G) / (h / G),

which is applied repeatedly: each pass recomputes D and G(eta, .) from the
current absorption estimate.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.ndimage import uniform_filter

from .forward_sim import MeasurementSet
from .grid_fem import NodalField, RegularGrid, build_grid, evaluate_points
from .greens import greens_from_detector, greens_on_scan
from .optics_model import GAMMA, MU_BAR, MUS_PRIME, OpticalCoefficients, ScanGrid
from .sparse_solver import DEFAULT_TOL

log = logging.getLogger(__name__)


class ReconWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Background:
    """Known tissue constants; mu_bar is also the absorption outside U."""

    mu_bar: float = MU_BAR
    mus_prime: float = MUS_PRIME
    gamma: float = GAMMA


@dataclass(frozen=True)
class ReconConfig:
    max_iters: int = 40
    rel_change_tol: float = 1e-4
    relaxation: float = 1.0
    mu_min: float = 1e-4
    mu_max: float = 1.0
    smooth_data: bool = False
    cg_tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if not 0 < self.mu_min < self.mu_max:
            raise ValueError("need 0 < mu_min < mu_max")
        if not 0 < self.relaxation <= 1:
            raise ValueError("relaxation must lie in (0, 1]")
        if self.rel_change_tol < 0:
            raise ValueError("rel_change_tol must be nonnegative")


@dataclass
class ReconState:
    mu: NodalField
    iteration: int = 0
    history: list[float] = field(default_factory=list)
    converged: bool = False
    warnings: list[str] = field(default_factory=list)


def fd_elliptic_on_scan(w: np.ndarray, D: np.ndarray, d1: float, d2: float) -> np.ndarray:
    """Flux-form central differences of -div(D grad w) on a lattice.

    ``w`` and ``D`` are (n2, n1) arrays with x along axis 1.  Face values of D
    are arithmetic means of the adjacent nodes.  The outermost ring, where the
    stencil is incomplete, is returned as NaN.
    """
    w = np.asarray(w, dtype=float)
    D = np.broadcast_to(np.asarray(D, dtype=float), w.shape)
    if w.ndim != 2 or min(w.shape) < 3:
        raise ValueError(f"need a lattice of at least 3x3 points, got {w.shape}")
    c = w[1:-1, 1:-1]
    De = 0.5 * (D[1:-1, 1:-1] + D[1:-1, 2:])
    Dw = 0.5 * (D[1:-1, 1:-1] + D[1:-1, :-2])
    Dn = 0.5 * (D[1:-1, 1:-1] + D[2:, 1:-1])
    Ds = 0.5 * (D[1:-1, 1:-1] + D[:-2, 1:-1])
    flux_x = (De * (w[1:-1, 2:] - c) - Dw * (c - w[1:-1, :-2])) / d1 ** 2
    flux_y = (Dn * (w[2:, 1:-1] - c) - Ds * (c - w[:-2, 1:-1])) / d2 ** 2
    out = np.full(w.shape, np.nan)
    out[1:-1, 1:-1] = -(flux_x + flux_y)
    return out


def normalized_data(meas: MeasurementSet, smooth: bool = False) -> np.ndarray:
    """Measurements divided by their maximum and rounded to single precision.

    The reconstruction is invariant to a global factor on h; normalizing and
    rounding makes that invariance hold exactly in floating point (barring
    ties at single-precision rounding boundaries).
    """
    h = meas.as_array()
    if smooth:
        h = uniform_filter(h, size=3, mode="nearest")
    hmax = np.max(np.abs(h))
    if hmax == 0:
        raise ValueError("all measurements are zero")
    return (h / hmax).astype(np.float32).astype(float)


def scan_lattice_grid(scan: ScanGrid) -> RegularGrid:
    return build_grid(scan.n1, scan.n2, scan.x_lo, scan.y_lo,
                      scan.x_hi - scan.x_lo, scan.y_hi - scan.y_lo)


def scan_to_grid(values: np.ndarray, scan: ScanGrid, grid: RegularGrid,
                 background: float) -> NodalField:
    """Bilinear transfer of lattice values; nodes outside U get ``background``.

    The deviation from the background is interpolated so nodes on the edge
    of U reproduce the background exactly.
    """
    lattice = NodalField(scan_lattice_grid(scan), np.ravel(values) - background)
    X, Y = grid.coordinates()
    inside = (X >= scan.x_lo) & (X <= scan.x_hi) & (Y >= scan.y_lo) & (Y <= scan.y_hi)
    out = np.full(grid.n, float(background))
    out[inside] = background + evaluate_points(lattice, X[inside], Y[inside])
    return NodalField(grid, out)


def recon_step(mu_k: NodalField, meas: MeasurementSet, consts: Background = Background(),
               config: ReconConfig = ReconConfig(),
               data: Optional[np.ndarray] = None,
               notes: Optional[list] = None) -> NodalField:
    """One fixed-point update mu^k -> mu^{k+1} on the grid of ``mu_k``.

    ``data`` may carry pre-normalized measurements (see ``normalized_data``).
    """
    grid = mu_k.grid
    scan = meas.scan
    if data is None:
        data = normalized_data(meas, config.smooth_data)

    coeffs = OpticalCoefficients(mu_k, consts.mus_prime, consts.gamma)
    D = 1.0 / (3.0 * (mu_k.values + consts.mus_prime))
    gf = greens_from_detector(coeffs, meas.eta, grid, D=NodalField(grid, D), tol=config.cg_tol)
    G = greens_on_scan(gf, scan).reshape(scan.n2, scan.n1)

    w = data / G
    floor = 1e-14 * np.max(w)
    if np.any(w <= floor):
        msg = f"h/G nonpositive at {int(np.sum(w <= floor))} foci; clamped to {floor:.2e}"
        warnings.warn(msg, ReconWarning, stacklevel=2)
        if notes is not None:
            notes.append(msg)
        w = np.maximum(w, floor)

    foci = scan.foci()
    D_scan = (1.0 / (3.0 * (evaluate_points(mu_k, foci[:, 0], foci[:, 1])
                            + consts.mus_prime))).reshape(w.shape)
    mu_prev = evaluate_points(mu_k, foci[:, 0], foci[:, 1]).reshape(w.shape)

    # mu = div(D grad w) / w = -(fd operator) / w
    mu_hat = -fd_elliptic_on_scan(w, D_scan, scan.d1, scan.d2) / w
    mu_hat = np.clip(mu_hat, config.mu_min, config.mu_max)
    om = config.relaxation
    mu_new = mu_hat if om == 1.0 else (1.0 - om) * mu_prev + om * mu_hat
    mu_new = np.clip(mu_new, config.mu_min, config.mu_max)
    mu_new[~scan.interior_mask().reshape(w.shape)] = consts.mu_bar
    out = scan_to_grid(mu_new, scan, grid, consts.mu_bar)
    return out.with_values(np.clip(out.values, config.mu_min, config.mu_max))


def run_reconstruction(meas: MeasurementSet, grid: RegularGrid,
                       consts: Background = Background(),
                       config: ReconConfig = ReconConfig(),
                       callback: Optional[Callable[[int, NodalField], None]] = None
                       ) -> ReconState:
    """Iterate ``recon_step`` from the constant background guess.

    Stops when ||mu^{k+1} - mu^k|| / ||mu^k|| drops below the configured
    tolerance or after ``max_iters`` steps.  ``callback(k, mu)`` sees every
    iterate.
    """
    state = ReconState(NodalField.constant(grid, consts.mu_bar))
    data = normalized_data(meas, config.smooth_data)
    for k in range(1, config.max_iters + 1):
        mu_new = recon_step(state.mu, meas, consts, config, data=data, notes=state.warnings)
        change = float(np.linalg.norm(mu_new.values - state.mu.values)
                       / np.linalg.norm(state.mu.values))
        state.mu, state.iteration = mu_new, k
        state.history.append(change)
        log.info("iteration %d: relative change %.3e", k, change)
        if callback is not None:
            callback(k, mu_new)
        if change < config.rel_change_tol:
            state.converged = True
            break
    return state
