import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from uotomo.grid_fem import NodalField, assemble_system, build_grid
from uotomo.sparse_solver import SolverError, solve_cg, solve_or_raise


def _poisson_1d(n):
    return sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


def test_identity_one_iteration():
    b = np.arange(1.0, 6.0)
    x, rep = solve_cg(sp.identity(5, format="csr"), b)
    assert rep.converged and rep.iterations <= 1
    assert np.array_equal(x, b)


def test_tridiagonal_matches_dense_solve():
    A = _poisson_1d(10)
    b = np.random.default_rng(0).standard_normal(10)
    x, rep = solve_cg(A, b)
    assert rep.converged
    assert np.allclose(x, np.linalg.solve(A.toarray(), b), rtol=0, atol=1e-10)


def test_zero_rhs():
    x, rep = solve_cg(_poisson_1d(7), np.zeros(7))
    assert rep.iterations == 0 and rep.converged
    assert np.all(x == 0)


def test_reports_nonconvergence():
    A = _poisson_1d(200)
    b = np.ones(200)
    x, rep = solve_cg(A, b, tol=1e-12, max_iter=3)
    assert not rep.converged and rep.iterations == 3
    with pytest.raises(SolverError):
        solve_or_raise(A, b, tol=1e-12, max_iter=3)


def test_converged_means_true_residual_below_tol():
    g = build_grid(33, 33)
    A = assemble_system(g, NodalField.constant(g, 0.03), NodalField.constant(g, 0.023), 0.431)
    b = np.random.default_rng(1).random(g.n)
    x, rep = solve_cg(A, b, tol=1e-10)
    assert rep.converged
    assert np.linalg.norm(b - A @ x) <= 1e-10 * np.linalg.norm(b)
    assert rep.residual <= 1e-10


def test_energy_error_decreases_at_checkpoints():
    g = build_grid(41, 41)
    A = assemble_system(g, NodalField.constant(g, 0.03), NodalField.constant(g, 0.023), 0.431)
    b = np.random.default_rng(2).random(g.n)
    exact = sp.linalg.spsolve(A.tocsc(), b)
    errs = []

    def cb(k, x):
        if k % 10 == 0:
            e = x - exact
            errs.append(e @ (A @ e))

    solve_cg(A, b, tol=1e-10, callback=cb)
    assert len(errs) > 3
    assert all(b_ < a for a, b_ in zip(errs, errs[1:]))


def test_bad_arguments():
    A = _poisson_1d(4)
    with pytest.raises(ValueError):
        solve_cg(A, np.ones(5))
    with pytest.raises(ValueError):
        solve_cg(A, np.ones(4), tol=0.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 10_000))
def test_solution_linearity(a, c, seed):
    rng = np.random.default_rng(seed)
    g = build_grid(12, 10)
    A = assemble_system(g, NodalField(g, 0.02 + rng.random(g.n)), NodalField(g, rng.random(g.n)), 0.4)
    b1, b2 = rng.standard_normal(g.n), rng.standard_normal(g.n)
    tol = 1e-10
    x = solve_or_raise(A, a * b1 + c * b2, tol=tol)
    y = a * solve_or_raise(A, b1, tol=tol) + c * solve_or_raise(A, b2, tol=tol)
    # both sides meet the residual bound, so their difference is tol-small in the A-image
    bound = 2 * tol * (abs(a) * np.linalg.norm(b1) + abs(c) * np.linalg.norm(b2))
    assert np.linalg.norm(A @ (x - y)) <= 1.01 * bound + 1e-300
