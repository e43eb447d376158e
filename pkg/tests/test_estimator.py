import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cubepersist.estimator import (Bandwidth, block_average, calibrate_bandwidth,
                                   calibration_holds, sublevel_mask, target_bandwidth)
from cubepersist.grid import GridSpec, ScalarField, read_field


@pytest.mark.parametrize("N,prefactor,block", [
    (50, 0.1, 1), (110, 0.1, 2), (150, 0.1, 2), (170, 0.1, 2), (230, 0.1, 3), (250, 0.1, 3),
    (50, 0.25, 3),
])
def test_calibrated_block_sizes(N, prefactor, block):
    # h* = c (log n / n)^(1/4) for d = 2, alpha = 1, rounded to the grid
    n = N * N
    assert round(N * prefactor * (math.log(n) / n) ** 0.25) == block
    assert calibrate_bandwidth(N, 2, 1.0, prefactor).block == block


def test_target_bandwidth_value():
    assert target_bandwidth(50, 2, 1.0, 0.25) == pytest.approx(0.05913, abs=5e-6)


def test_block_clamped():
    assert calibrate_bandwidth(10, 2, 1.0, 1e-6).block == 1
    assert calibrate_bandwidth(10, 2, 1.0, 1e6).block == 10


@pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(alpha=1.5), dict(prefactor=0.0)])
def test_calibration_argument_checks(kw):
    args = dict(N=50, d=2, alpha=1.0, prefactor=0.1) | kw
    with pytest.raises(ValueError):
        calibrate_bandwidth(**args)


def test_bandwidth_layout():
    bw = Bandwidth(3, 10)
    assert bw.h == pytest.approx(0.3)
    assert bw.blocks_per_axis == 4 and bw.complete_blocks_per_axis == 3
    with pytest.raises(ValueError):
        Bandwidth(11, 10)


def _loop_average(arr, b):
    N = arr.shape[0]
    B = -(-N // b)
    out = np.zeros((B, B))
    for I in range(B):
        for J in range(B):
            out[I, J] = arr[I * b:(I + 1) * b, J * b:(J + 1) * b].mean()
    return out


@given(st.integers(2, 13), st.integers(1, 13), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_block_average_matches_loops(N, b, seed):
    b = min(b, N)
    arr = np.random.default_rng(seed).normal(size=(N, N))
    est = block_average(ScalarField.from_array(arr), Bandwidth(b, N))
    np.testing.assert_allclose(est.values, _loop_average(arr, b), rtol=1e-12, atol=1e-12)


def test_truncated_block_counts():
    est = block_average(ScalarField.from_array(np.ones((5, 5))), Bandwidth(2, 5))
    np.testing.assert_array_equal(est.counts, [[4, 4, 2], [4, 4, 2], [2, 2, 1]])
    np.testing.assert_array_equal(est.values, np.ones((3, 3)))


def test_block_of_uses_half_open_cells():
    est = block_average(ScalarField.from_array(np.arange(36.0).reshape(6, 6)), Bandwidth(2, 6))
    # grid point k/N belongs to block ceil(k / b)
    pts = np.array([[1 / 6, 2 / 6], [3 / 6, 6 / 6], [0.0, 0.0]])
    I, J = est.block_of(pts)
    np.testing.assert_array_equal(I, [0, 1, 0])
    np.testing.assert_array_equal(J, [0, 2, 0])
    assert est.value_at([[2 / 6, 2 / 6]])[0] == est.values[0, 0]


def test_cube_bounds_last_block_short():
    est = block_average(ScalarField.from_array(np.zeros((5, 5))), Bandwidth(2, 5))
    np.testing.assert_allclose(est.cube_bounds(), [0, 0.4, 0.8, 1.0])


def test_block_average_mismatch():
    with pytest.raises(ValueError):
        block_average(ScalarField.from_array(np.zeros((5, 5))), Bandwidth(2, 6))


def test_calibration_condition():
    # N = 50 with b = 3: h = 0.06 but sqrt(log(1/h^2) / 9) ~ 0.79
    assert not calibration_holds(Bandwidth(3, 50), 2, 1.0)
    assert calibration_holds(Bandwidth(100, 1000), 2, 1.0)
    assert not calibration_holds(Bandwidth(5, 5), 2, 1.0)


def test_sublevel_mask_and_save(tmp_path):
    est = block_average(ScalarField.from_array(np.arange(16.0).reshape(4, 4)), Bandwidth(2, 4))
    np.testing.assert_array_equal(sublevel_mask(est, 3.0), [[True, False], [False, False]])
    est.save(tmp_path / "b.cpf")
    vals, meta = read_field(tmp_path / "b.cpf")
    np.testing.assert_array_equal(vals, est.values)
    assert meta["block"] == 2 and meta["source_N"] == 4 and meta["kind"] == "block_field"


def test_one_dimensional():
    est = block_average(ScalarField(GridSpec(1, 7), np.arange(7.0)), Bandwidth(3, 7))
    np.testing.assert_allclose(est.values, [1.0, 4.0, 6.0])
