"""Jacobi-preconditioned conjugate gradients for the SPD systems from grid_fem."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

DEFAULT_TOL = 1e-10


class SolverError(RuntimeError):
    """A linear solve did not reach its tolerance."""


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    converged: bool


def solve_cg(A, b, tol: float = DEFAULT_TOL, max_iter: Optional[int] = None,
             x0: Optional[np.ndarray] = None,
             callback: Optional[Callable[[int, np.ndarray], None]] = None):
    """Solve ``A x = b`` with diagonally preconditioned CG.

    Stops once ``||b - A x|| <= tol * ||b||`` (checked against the true
    residual, not only the recurrence).  Non-convergence is reported through
    ``SolveReport.converged`` rather than raised.  ``callback(k, x)`` is called
    after every iteration.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"matrix shape {A.shape} does not match rhs length {n}")
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    if max_iter is None:
        max_iter = 10 * n

    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)

    diag = A.diagonal()
    if np.any(diag <= 0):
        return x, SolveReport(0, np.inf, False)
    inv_diag = 1.0 / diag
    target = tol * bnorm

    k = 0
    r = b - A @ x
    rnorm = np.linalg.norm(r)
    while rnorm > target and k < max_iter:
        # inner loop runs on the recurrence; the outer loop restarts on drift
        z = inv_diag * r
        p = z.copy()
        rz = r @ z
        while k < max_iter:
            Ap = A @ p
            pAp = p @ Ap
            if pAp <= 0:
                return x, SolveReport(k, rnorm / bnorm, False)
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            k += 1
            if callback is not None:
                callback(k, x)
            if np.linalg.norm(r) <= 0.5 * target:
                break
            z = inv_diag * r
            rz_new = r @ z
            p *= rz_new / rz
            p += z
            rz = rz_new
        r = b - A @ x
        rnorm = np.linalg.norm(r)

    res = rnorm / bnorm
    return x, SolveReport(k, res, bool(res <= tol))


def solve_or_raise(A, b, tol: float = DEFAULT_TOL, max_iter: Optional[int] = None,
                   x0: Optional[np.ndarray] = None) -> np.ndarray:
    x, rep = solve_cg(A, b, tol=tol, max_iter=max_iter, x0=x0)
    if not rep.converged:
        raise SolverError(f"CG stopped after {rep.iterations} iterations "
                          f"at relative residual {rep.residual:.3e} (tol {tol:.1e})")
    return x
