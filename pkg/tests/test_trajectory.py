import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spiraldeblur.trajectory import (DEFAULT_INTERLEAVES, LONG_READOUT, SHORT_READOUT,
                                     SpiralTrajectory, make_spiral, timestamps)


@pytest.mark.parametrize("t_read", [SHORT_READOUT, LONG_READOUT])
def test_canonical_protocols(t_read):
    traj = make_spiral(84, t_read)
    assert traj.n_interleaves == DEFAULT_INTERLEAVES[t_read]
    assert traj.samples_per_interleaf == round(t_read / 4e-6)
    for i in range(traj.n_interleaves):
        kx, ky, t = traj.interleaf(i)
        assert kx[0] == 0 and ky[0] == 0 and t[0] == 0
        assert np.hypot(kx, ky).max() <= 42


def test_long_protocol_last_timestamp():
    traj = make_spiral(84, LONG_READOUT)
    assert math.isclose(traj.t.max(), LONG_READOUT - 4e-6, rel_tol=1e-12)


@pytest.mark.parametrize("t_read", [1e-3, SHORT_READOUT, LONG_READOUT])
def test_sample_count_thousand(t_read):
    traj = make_spiral(84, t_read, t_read / 1000, 1)
    assert traj.samples_per_interleaf == 1000


def test_timestamps_examples():
    traj = make_spiral(16, 160e-6, 10e-6, 2)
    t = timestamps(traj)
    np.testing.assert_allclose(t[:3], [0, 10e-6, 20e-6], rtol=0, atol=1e-18)
    second = traj.interleaf(1)[2]
    assert second[0] == 0
    np.testing.assert_array_equal(second, traj.interleaf(0)[2])
    assert t.max() < traj.readout_duration


@settings(max_examples=40, deadline=None)
@given(matrix=st.integers(8, 128), n_int=st.integers(1, 16),
       n=st.integers(16, 2000), t_read=st.floats(1e-4, 2e-2))
def test_geometry_invariants(matrix, n_int, n, t_read):
    dwell = t_read / n
    traj = make_spiral(matrix, t_read, dwell, n_int)
    spi = traj.samples_per_interleaf
    assert spi == n or spi == n - 1 or spi == n + 1  # floor of a rounded quotient
    kx = traj.kx.reshape(n_int, -1)
    ky = traj.ky.reshape(n_int, -1)
    r = np.hypot(kx, ky)
    assert np.all(np.diff(r, axis=1) >= -1e-12)
    assert r.max() <= matrix / 2
    # interleaf i is interleaf 0 rotated by 2 pi i / n_int
    for i in range(n_int):
        a = 2 * np.pi * i / n_int
        rx = kx[0] * math.cos(a) - ky[0] * math.sin(a)
        ry = kx[0] * math.sin(a) + ky[0] * math.cos(a)
        assert np.max(np.hypot(rx - kx[i], ry - ky[i])) < 1e-9
    t = traj.t.reshape(n_int, -1)
    assert np.all(t[:, 0] == 0)
    assert np.all(np.diff(t, axis=1) > 0)
    np.testing.assert_allclose(np.diff(t, axis=1), dwell, rtol=1e-9)


@pytest.mark.parametrize("n_int", [1, 5, 6, 13])
def test_combined_turn_spacing_is_one_cycle(n_int):
    # choose t_read so that one turn is exactly 1000 samples
    n_turns = 84 / (2 * n_int)
    traj = make_spiral(84, n_turns * 1e-3, 1e-6, n_int)
    kx, ky, _ = traj.interleaf(0)
    r = np.hypot(kx, ky)
    # one interleaf advances n_int cycles/FOV per turn ...
    np.testing.assert_allclose(np.diff(r[::1000]), n_int, rtol=1e-9)
    # ... and interleaf 1 crosses the same angle 1/n_int turn later, i.e. 1 cycle/FOV further out
    if n_int > 1 and 1000 % n_int == 0:
        lag = 1000 // n_int
        r1 = np.hypot(*traj.interleaf(1)[:2])
        np.testing.assert_allclose(r[lag:lag + 500] - r1[:500], 1.0, rtol=1e-9)


@pytest.mark.parametrize("kwargs", [dict(matrix=4), dict(t_read=-1.0), dict(dwell=0.0),
                                    dict(n_interleaves=0), dict(t_read=1e-4, dwell=1e-5)])
def test_domain_errors(kwargs):
    with pytest.raises(ValueError):
        make_spiral(**kwargs)


def test_trajectory_validation():
    with pytest.raises(ValueError):  # exceeds Nyquist radius
        SpiralTrajectory(np.array([0.0, 9.0]), np.zeros(2), np.array([0.0, 1e-6]), 1, 2e-6, 1e-6, 16)
    with pytest.raises(ValueError):  # does not start at 0
        SpiralTrajectory(np.zeros(2), np.zeros(2), np.array([1e-6, 2e-6]), 1, 2e-6, 1e-6, 16)
    with pytest.raises(ValueError):  # not increasing
        SpiralTrajectory(np.zeros(2), np.zeros(2), np.array([0.0, 0.0]), 1, 2e-6, 1e-6, 16)


def test_arrays_are_read_only():
    traj = make_spiral(16, 1e-3, 1e-5, 2)
    with pytest.raises(ValueError):
        traj.kx[0] = 1.0


def test_default_interleaves_fully_sample_other_readouts():
    traj = make_spiral(64, 5e-3, 4e-6)
    n = traj.samples_per_interleaf
    # arc spacing of the outer turn <= 1 cycle/FOV
    per_turn = n / (64 / (2 * traj.n_interleaves))
    assert 2 * np.pi * 32 / per_turn <= 1.0
