"""Optical coefficients, phantoms, ultrasound intensity fields and scan grids."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid_fem import NodalField, RegularGrid

MU_BAR = 0.023        # cm^-1, soft tissue background absorption
MUS_PRIME = 10.74     # cm^-1, reduced scattering
GAMMA = 0.431         # Robin boundary constant
DOMAIN = (0.0, 5.0, 0.0, 5.0)
SCAN_REGION = (0.5, 4.5, 0.5, 4.5)
DETECTOR = (5.0, 2.5)

# (center x, center y, radius, contrast) in cm / multiples of mu_bar
INCLUSION_K = (2.5, 2.5, 0.5)
MULTI_INCLUSIONS = (
    (1.5, 3.5, 0.4, 2.0),
    (3.5, 3.5, 0.3, 1.5),
    (2.5, 1.5, 0.5, 1.2),
)
PHANTOMS = ("disk_low", "disk_high", "multi", "constant")


class ModelValidityWarning(UserWarning):
    """Coefficients leave the turbid-medium regime of the diffusion model."""


@dataclass(frozen=True, eq=False)
class OpticalCoefficients:
    mu: NodalField
    mus_prime: float = MUS_PRIME
    gamma: float = GAMMA

    def __post_init__(self):
        if np.any(self.mu.values <= 0):
            raise ValueError("absorption must be strictly positive")
        if self.mus_prime <= 0 or self.gamma <= 0:
            raise ValueError("mus_prime and gamma must be positive")
        if self.mu.values.max() > 0.1 * self.mus_prime:
            warnings.warn(f"max absorption {self.mu.values.max():.3g} exceeds 10% of "
                          f"mus_prime={self.mus_prime}; diffusion model questionable",
                          ModelValidityWarning, stacklevel=2)

    @property
    def grid(self) -> RegularGrid:
        return self.mu.grid


def diffusion_coefficient(coeffs: OpticalCoefficients) -> NodalField:
    """D = 1 / (3 (mu_a + mus'))."""
    return coeffs.mu.with_values(1.0 / (3.0 * (coeffs.mu.values + coeffs.mus_prime)))


def _in_disk(x, y, cx, cy, r):
    # the slack keeps nodes lying on the circle from flipping with coordinate rounding
    return (x - cx) ** 2 + (y - cy) ** 2 <= r * r * (1 + 1e-9)


def make_phantom(case: str, grid: RegularGrid, mu_bar: float = MU_BAR) -> NodalField:
    """Absorption test cases; inclusions are assigned by node membership.

    ``disk_low``/``disk_high`` put a disk of radius 0.5 cm at (2.5, 2.5) with
    1.2x / 10x background absorption.  ``multi`` uses three disks with
    contrasts 2.0, 1.5 and 1.2 (see ``MULTI_INCLUSIONS``).  ``constant`` is
    the background alone.
    """
    if case not in PHANTOMS:
        raise ValueError(f"unknown phantom {case!r}; expected one of {PHANTOMS}")
    if grid.x0 > 0 or grid.y0 > 0 or grid.x1 < 5 or grid.y1 < 5:
        raise ValueError("phantoms are defined on a grid covering [0, 5]^2")
    X, Y = grid.coordinates()
    mu = np.full(grid.n, float(mu_bar))
    if case in ("disk_low", "disk_high"):
        cx, cy, r = INCLUSION_K
        inside = _in_disk(X, Y, cx, cy, r)
        mu[inside] = (1.2 if case == "disk_low" else 10.0) * mu_bar
    elif case == "multi":
        for cx, cy, r, c in MULTI_INCLUSIONS:
            mu[_in_disk(X, Y, cx, cy, r)] = c * mu_bar
    return NodalField(grid, mu)


def inclusion_mask(case: str, xs, ys) -> np.ndarray:
    """Boolean mask of points lying in any inclusion of a phantom."""
    xs, ys = np.asarray(xs), np.asarray(ys)
    if case in ("disk_low", "disk_high"):
        disks = [INCLUSION_K]
    elif case == "multi":
        disks = [d[:3] for d in MULTI_INCLUSIONS]
    else:
        disks = []
    m = np.zeros(xs.shape, dtype=bool)
    for cx, cy, r in disks:
        m |= _in_disk(xs, ys, cx, cy, r)
    return m


@dataclass(frozen=True)
class UltrasoundShape:
    """Gaussian focus with per-axis widths, or an ideal point focus."""

    sigma1: float = 0.1
    sigma2: float = 0.1
    perfect: bool = False

    def __post_init__(self):
        if not self.perfect and not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ValueError("Gaussian widths must be positive")

    @classmethod
    def point(cls) -> "UltrasoundShape":
        return cls(0.0, 0.0, perfect=True)

    def label(self) -> str:
        return "perfect" if self.perfect else "gaussian"


def _axis_profiles(grid: RegularGrid, cx, cy, shape: UltrasoundShape):
    """Separable |p|^2 factors, normalized so each axis has unit trapezoid integral."""
    cx, cy = np.atleast_1d(cx), np.atleast_1d(cy)
    gx = np.exp(-2.0 * (grid.x[None, :] - cx[:, None]) ** 2 / shape.sigma1 ** 2)
    gy = np.exp(-2.0 * (grid.y[None, :] - cy[:, None]) ** 2 / shape.sigma2 ** 2)
    wx = np.full(grid.nx, grid.hx)
    wx[[0, -1]] *= 0.5
    wy = np.full(grid.ny, grid.hy)
    wy[[0, -1]] *= 0.5
    gx /= (gx @ wx)[:, None]
    gy /= (gy @ wy)[:, None]
    return gx, gy


def gaussian_intensity(grid: RegularGrid, center, shape: UltrasoundShape) -> NodalField:
    """|p(x - center)|^2 for p = C exp(-sum x_j^2 / sigma_j^2).

    C is fixed by requiring the trapezoidal integral over the grid to be 1, so
    the intensity tends to a unit point mass as the widths shrink.
    """
    if shape.perfect:
        raise ValueError("a perfect focus has no nodal representation; use delta_load")
    gx, gy = _axis_profiles(grid, center[0], center[1], shape)
    return NodalField(grid, np.outer(gy[0], gx[0]))


@dataclass(frozen=True)
class ScanGrid:
    """Ultrasound foci at the vertices of a uniform lattice over a rectangle U."""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    n1: int
    n2: int

    @property
    def d1(self) -> float:
        return (self.x_hi - self.x_lo) / (self.n1 - 1)

    @property
    def d2(self) -> float:
        return (self.y_hi - self.y_lo) / (self.n2 - 1)

    @property
    def xs(self) -> np.ndarray:
        return self.x_lo + self.d1 * np.arange(self.n1)

    @property
    def ys(self) -> np.ndarray:
        return self.y_lo + self.d2 * np.arange(self.n2)

    @property
    def size(self) -> int:
        return self.n1 * self.n2

    @property
    def region(self) -> tuple[float, float, float, float]:
        return (self.x_lo, self.x_hi, self.y_lo, self.y_hi)

    def foci(self) -> np.ndarray:
        """(n1*n2, 2) focus coordinates, x fastest."""
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def interior_mask(self) -> np.ndarray:
        m = np.zeros((self.n2, self.n1), dtype=bool)
        m[1:-1, 1:-1] = True
        return m.ravel()


def make_scan_grid(U=SCAN_REGION, n1: int = 100, n2: Optional[int] = None,
                   domain=DOMAIN) -> ScanGrid:
    """Scan lattice over ``U = (x_lo, x_hi, y_lo, y_hi)``; U must sit strictly inside the domain."""
    n2 = n1 if n2 is None else n2
    if n1 < 2 or n2 < 2:
        raise ValueError("scan grid needs at least 2 foci per axis")
    x_lo, x_hi, y_lo, y_hi = map(float, U)
    if not (x_lo < x_hi and y_lo < y_hi):
        raise ValueError(f"degenerate scan region {U}")
    dx0, dx1, dy0, dy1 = domain
    if not (dx0 < x_lo and x_hi < dx1 and dy0 < y_lo and y_hi < dy1):
        raise ValueError(f"scan region {U} is not strictly inside the domain {domain}")
    return ScanGrid(x_lo, x_hi, y_lo, y_hi, int(n1), int(n2))
