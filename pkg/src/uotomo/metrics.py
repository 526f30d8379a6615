"""Figures of merit comparing a reconstruction with its phantom."""
from __future__ import annotations

import numpy as np

from .grid_fem import NodalField
from .optics_model import SCAN_REGION, inclusion_mask, make_phantom


def region_interior(grid, U=SCAN_REGION) -> np.ndarray:
    """Nodes strictly inside the rectangle U."""
    X, Y = grid.coordinates()
    x_lo, x_hi, y_lo, y_hi = U
    return (X > x_lo) & (X < x_hi) & (Y > y_lo) & (Y < y_hi)


def relative_l2_error(mu: NodalField, truth: NodalField, mask: np.ndarray) -> float:
    w = mu.grid.trapezoid_weights()[mask]
    d = (mu.values - truth.values)[mask]
    return float(np.sqrt(np.sum(w * d * d) / np.sum(w * truth.values[mask] ** 2)))


def anomaly_centroid(mu: NodalField, mu_bar: float, mask: np.ndarray) -> tuple[float, float]:
    """Excess-weighted centroid of the nodes above half the peak excess."""
    X, Y = mu.grid.coordinates()
    excess = np.where(mask, mu.values - mu_bar, 0.0)
    peak = excess.max()
    if peak <= 0:
        return (float("nan"), float("nan"))
    sel = excess >= 0.5 * peak
    w = excess[sel]
    return (float(np.sum(w * X[sel]) / w.sum()), float(np.sum(w * Y[sel]) / w.sum()))


def reconstruction_metrics(mu: NodalField, case: str, mu_bar: float, U=SCAN_REGION) -> dict:
    grid = mu.grid
    inner = region_interior(grid, U)
    X, Y = grid.coordinates()
    K = inclusion_mask(case, X, Y) & inner
    bg = inner & ~inclusion_mask(case, X, Y)
    out = {
        "l2_error": relative_l2_error(mu, make_phantom(case, grid, mu_bar), inner),
        "background_mean": float(mu.values[bg].mean()),
        "min": float(mu.values.min()),
        "max": float(mu.values.max()),
    }
    if K.any():
        out["inclusion_mean"] = float(mu.values[K].mean())
        out["contrast"] = out["inclusion_mean"] / out["background_mean"]
        out["centroid_x"], out["centroid_y"] = anomaly_centroid(mu, mu_bar, inner)
    return out
