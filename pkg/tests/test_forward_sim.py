import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uotomo.forward_sim import (MeasurementSet, SourceSpec, add_noise, measure_adjoint,
                                measure_direct, solve_incident, solve_modulated)
from uotomo.grid_fem import NodalField, build_grid, evaluate
from uotomo.greens import greens_from_detector
from uotomo.optics_model import (MU_BAR, OpticalCoefficients, UltrasoundShape,
                                 gaussian_intensity, make_phantom, make_scan_grid)

GRID = build_grid(41, 41)
BG = OpticalCoefficients(NodalField.constant(GRID, MU_BAR))
SHAPE = UltrasoundShape(0.2, 0.2)


@pytest.fixture(scope="module")
def u_bg():
    return solve_incident(BG, SourceSpec())


def test_zero_source_gives_zero_field():
    src = SourceSpec()
    object.__setattr__(src, "strength", 0.0)
    assert np.all(solve_incident(BG, src).values == 0)


def test_source_validation():
    with pytest.raises(ValueError):
        SourceSpec(("north",))
    with pytest.raises(ValueError):
        SourceSpec(strength=-1.0)


def test_incident_symmetric_about_midline(u_bg):
    a = u_bg.as_array()
    assert np.max(np.abs(a - a[::-1])) <= 1e-10 * a.max()


def test_incident_decays_away_from_source(u_bg):
    row = u_bg.as_array()[20]  # y = 2.5
    assert np.all(np.diff(row) < 0)
    assert np.all(u_bg.values > 0)


def test_modulated_zero_and_linear(u_bg):
    zero = NodalField.constant(GRID, 0.0)
    assert np.all(solve_modulated(BG, u_bg, zero).values == 0)
    p = gaussian_intensity(GRID, (2.5, 2.5), SHAPE)
    v1 = solve_modulated(BG, u_bg, p).values
    v3 = solve_modulated(BG, u_bg, p.with_values(3.0 * p.values)).values
    assert np.allclose(v3, 3.0 * v1, rtol=1e-9, atol=0)


def test_modulated_signal_depends_on_focus(u_bg):
    near = solve_modulated(BG, u_bg, gaussian_intensity(GRID, (0.75, 2.5), SHAPE))
    center = solve_modulated(BG, u_bg, gaussian_intensity(GRID, (2.5, 2.5), SHAPE))
    assert evaluate(near, (5, 2.5)) != pytest.approx(evaluate(center, (5, 2.5)), rel=1e-3)


def test_direct_mirror_symmetry_and_positivity():
    scan = make_scan_grid(n1=4, n2=5)
    m = measure_direct(BG, SourceSpec(), scan, SHAPE).as_array()
    assert np.max(np.abs(m - m[::-1])) <= 1e-8 * m.max()
    assert np.all(m > 0)


def test_more_absorption_attenuates():
    scan = make_scan_grid((2.4, 2.6, 2.4, 2.6), n1=3)
    hi = OpticalCoefficients(NodalField.constant(GRID, 10 * MU_BAR))
    h_lo = measure_direct(BG, SourceSpec(), scan, SHAPE).as_array()[1, 1]
    h_hi = measure_direct(hi, SourceSpec(), scan, SHAPE).as_array()[1, 1]
    assert h_hi < h_lo


@pytest.mark.parametrize("shape", [UltrasoundShape(0.1, 0.1), UltrasoundShape(0.1, 0.3),
                                   UltrasoundShape.point()])
def test_adjoint_matches_direct(shape):
    coeffs = OpticalCoefficients(make_phantom("disk_high", GRID))
    scan = make_scan_grid(n1=6, n2=5)
    d = measure_direct(coeffs, SourceSpec(), scan, shape, alpha=2.0)
    a = measure_adjoint(coeffs, SourceSpec(), scan, shape, alpha=2.0)
    assert np.max(np.abs(d.values - a.values) / a.values) <= 1e3 * 1e-10
    assert (d.solves, a.solves) == (1 + scan.size, 2)
    assert (d.provenance, a.provenance) == ("direct", "adjoint")


def test_perfect_focus_is_nodal_product(u_bg):
    # foci on grid nodes so the products are plain nodal values
    scan = make_scan_grid((1.0, 4.0, 1.0, 4.0), n1=7)
    a = measure_adjoint(BG, SourceSpec(), scan, UltrasoundShape.point(), alpha=1.5)
    w = greens_from_detector(BG, (5, 2.5)).field
    expect = [1.5 * evaluate(w, xi) * evaluate(u_bg, xi) for xi in scan.foci()]
    assert np.allclose(a.values, expect, rtol=1e-9, atol=0)


@settings(max_examples=5, deadline=None)
@given(st.floats(0.1, 50))
def test_source_linearity(c):
    scan = make_scan_grid(n1=5)
    h1 = measure_adjoint(BG, SourceSpec(), scan, SHAPE).values
    hc = measure_adjoint(BG, SourceSpec(strength=c), scan, SHAPE).values
    assert np.allclose(hc, c * h1, rtol=1e-8, atol=0)


def test_noise_contract():
    scan = make_scan_grid(n1=100)
    m = MeasurementSet(scan, (5, 2.5), np.full(scan.size, 2.0))
    assert add_noise(m, 0.0) is m
    a, b = add_noise(m, 0.01, seed=7), add_noise(m, 0.01, seed=7)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, add_noise(m, 0.01, seed=8).values)
    rel = a.values / m.values - 1
    assert np.std(rel) == pytest.approx(0.01, rel=0.1)
    with pytest.raises(ValueError):
        add_noise(m, -0.1)


def test_measurement_set_validation():
    scan = make_scan_grid(n1=3)
    with pytest.raises(ValueError):
        MeasurementSet(scan, (5, 2.5), np.ones(8))
    with pytest.raises(ValueError):
        MeasurementSet(scan, (5, 2.5), np.r_[np.ones(8), np.inf])
    m = MeasurementSet(scan, (5, 2.5), np.ones(9), provenance="adjoint", solves=2)
    s = m.scaled(4.0)
    assert np.all(s.values == 4.0) and s.provenance == "adjoint" and s.solves == 2
