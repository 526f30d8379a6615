import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from uotomo.fileio import (FormatError, read_field_csv, read_measurements_csv, read_pgm,
                           write_field_csv, write_measurements_csv, write_pgm)
from uotomo.forward_sim import MeasurementSet
from uotomo.grid_fem import GridMismatchError, NodalField, build_grid
from uotomo.optics_model import UltrasoundShape, make_scan_grid

finite = st.floats(allow_nan=False, allow_infinity=False)


@settings(max_examples=30, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(2, 6), st.integers(2, 6), st.data())
def test_field_round_trip_bitwise(tmp_path, nx, ny, data):
    g = build_grid(nx, ny, -1.25, 0.1, 3.3, 0.7)
    vals = data.draw(arrays(float, g.n, elements=finite))
    f = NodalField(g, vals)
    path = write_field_csv(f, tmp_path / "f.csv")
    back = read_field_csv(path, grid=g)
    assert back.grid == g
    assert np.array_equal(back.values, f.values)
    assert path.read_text().splitlines()[1] == f"0,0,{vals[0]:.17e}"


def test_field_missing_row(tmp_path):
    g = build_grid(3, 3)
    path = write_field_csv(NodalField.constant(g, 1.0), tmp_path / "f.csv")
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(FormatError):
        read_field_csv(path)


@pytest.mark.parametrize("mutate", [
    lambda L: ["3,3,0,0,5"] + L[1:],
    lambda L: L[:1] + ["0,0,nan"] + L[2:],
    lambda L: L[:1] + ["0,0,inf"] + L[2:],
    lambda L: L[:1] + [L[2]] + L[2:],     # duplicate node
    lambda L: L[:1] + ["0,0"] + L[2:],
])
def test_field_malformed(tmp_path, mutate):
    g = build_grid(3, 3)
    path = write_field_csv(NodalField.constant(g, 2.0), tmp_path / "f.csv")
    path.write_text("\n".join(mutate(path.read_text().splitlines())) + "\n")
    with pytest.raises(FormatError):
        read_field_csv(path)


def test_field_grid_mismatch(tmp_path):
    path = write_field_csv(NodalField.constant(build_grid(4, 4), 1.0), tmp_path / "f.csv")
    with pytest.raises(GridMismatchError):
        read_field_csv(path, grid=build_grid(4, 4, 0, 0, 5, 4))


def _meas(shape=UltrasoundShape(0.1, 0.3)):
    scan = make_scan_grid((0.5, 4.5, 1.0, 4.0), 4, 3)
    vals = np.random.default_rng(0).random(scan.size) * 1e-3
    return MeasurementSet(scan, (5.0, 2.5), vals, "adjoint", shape, 2.0, 2)


@pytest.mark.parametrize("shape", [UltrasoundShape(0.1, 0.3), UltrasoundShape.point()])
def test_measurement_round_trip(tmp_path, shape):
    m = _meas(shape)
    back = read_measurements_csv(write_measurements_csv(m, tmp_path / "m.csv"))
    assert np.array_equal(back.values, m.values)
    assert back.scan == m.scan and back.eta == m.eta and back.alpha == m.alpha
    assert back.provenance == "adjoint"
    assert back.shape == m.shape


def test_measurement_missing_eta(tmp_path):
    path = write_measurements_csv(_meas(), tmp_path / "m.csv")
    lines = path.read_text().splitlines()
    keys, vals = lines[0].split(","), lines[1].split(",")
    keep = [i for i, k in enumerate(keys) if k != "eta_x"]
    lines[0] = ",".join(keys[i] for i in keep)
    lines[1] = ",".join(vals[i] for i in keep)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="eta_x"):
        read_measurements_csv(path)


def test_measurement_row_count(tmp_path):
    path = write_measurements_csv(_meas(), tmp_path / "m.csv")
    path.write_text("\n".join(path.read_text().splitlines()[:-1]) + "\n")
    with pytest.raises(FormatError):
        read_measurements_csv(path)


def test_pgm_constant_field(tmp_path):
    g = build_grid(5, 4)
    with pytest.warns(UserWarning):
        path = write_pgm(NodalField.constant(g, 3.0), tmp_path / "c.pgm")
    img = read_pgm(path)
    assert img.shape == (4, 5) and np.all(img == img[0, 0])


def test_pgm_two_levels_and_orientation(tmp_path):
    g = build_grid(4, 3)
    _, Y = g.coordinates()
    img = read_pgm(write_pgm(NodalField(g, np.where(Y > 2.5, 1.0, 0.0)), tmp_path / "t.pgm"))
    assert sorted(np.unique(img)) == [0, 65535]
    assert np.all(img[0] == 65535) and np.all(img[-1] == 0)  # top row is max y
    raw = (tmp_path / "t.pgm").read_bytes()
    assert raw.startswith(b"P5\n4 3\n65535\n") and len(raw) == len(b"P5\n4 3\n65535\n") + 24


def test_pgm_fixed_range_clips(tmp_path):
    g = build_grid(3, 2)
    f = NodalField(g, np.array([-1.0, 0.0, 0.5, 1.0, 2.0, 0.25]))
    img = read_pgm(write_pgm(f, tmp_path / "r.pgm", vrange=(0.0, 1.0)))
    bottom_row = img[-1]  # first three nodes, y = 0
    assert bottom_row.tolist() == [0, 0, 32768]
    assert img[0].tolist() == [65535, 65535, 16384]
