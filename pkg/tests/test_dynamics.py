import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from koopman_rkhs import dynamics
from koopman_rkhs.dynamics import (FlowSpec, IntegrationError, TrajectoryConfig, flow_torus,
                                   generate_trajectory, integrate, l63_vector_field, observe,
                                   read_series_csv, write_series_csv)


def rk4(y, h, steps, field=l63_vector_field):
    y = np.array(y, dtype=float)
    for _ in range(steps):
        k1 = field(y)
        k2 = field(y + 0.5 * h * k1)
        k3 = field(y + 0.5 * h * k2)
        k4 = field(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def test_torus_identity():
    np.testing.assert_array_equal(flow_torus([0.0, 0.0], 0.0), [0.0, 0.0])


def test_torus_full_turn():
    out = flow_torus([0.0, 0.0], 2 * math.pi)
    assert out[0] == pytest.approx(0.0, abs=1e-12) or out[0] == pytest.approx(2 * math.pi, abs=1e-12)
    assert out[1] == pytest.approx(math.fmod(2 * math.pi * math.sqrt(2), 2 * math.pi), abs=1e-12)
    assert out[1] == pytest.approx(2 * math.pi * (math.sqrt(2) - 1), abs=1e-12)


def test_torus_half_turn_offset():
    out = flow_torus([math.pi, math.pi], 1.0)
    np.testing.assert_allclose(out, [math.pi + 1, (math.pi + math.sqrt(2)) % (2 * math.pi)], atol=1e-14)


@given(st.floats(0, 2 * math.pi, exclude_max=True), st.floats(0, 2 * math.pi, exclude_max=True),
       st.floats(0, 1e4))
def test_torus_stays_in_range(a, b, t):
    out = flow_torus([a, b], t)
    assert np.all(out >= 0) and np.all(out < 2 * math.pi)


@pytest.mark.parametrize("x, expected", [
    ((0, 1, 1.05), (10, -1, -2.8)),
    ((0, 0, 0), (0, 0, 0)),
    ((1, 1, 1), (0, 26, 1 - 8 / 3)),
])
def test_l63_field(x, expected):
    np.testing.assert_allclose(l63_vector_field(x), expected, atol=1e-14)


def test_l63_integration_matches_fine_rk4():
    x0 = [0.0, 1.0, 1.05]
    ref = rk4(x0, 1e-4, 10000)
    out = integrate(FlowSpec("l63"), x0, 1.0)
    np.testing.assert_allclose(out, ref, atol=1e-7, rtol=0)
    tight = integrate(FlowSpec("l63"), x0, 1.0, tol=1e-12, atol=1e-14)
    np.testing.assert_allclose(tight, ref, atol=1e-9, rtol=0)
    assert np.max(np.abs(tight - ref)) < np.max(np.abs(out - ref))


def test_integration_zero_time_is_identity():
    x0 = np.array([1.0, -2.0, 20.0])
    np.testing.assert_array_equal(integrate(FlowSpec("l63"), x0, 0.0), x0)


def test_integration_underflow_reported():
    with pytest.raises(IntegrationError):
        integrate(FlowSpec("l63"), [0.0, 1.0, 1.05], 1.0, tol=1e-300, atol=1e-300)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        integrate(FlowSpec("l63"), [0.0, 1.0, 1.05], -1.0)


def test_flowspec_defaults():
    assert FlowSpec("torus")["alpha2"] == math.sqrt(2)
    spec = FlowSpec("product")
    assert (spec["sigma"], spec["rho"], spec["beta"]) == (10.0, 28.0, 8.0 / 3.0)
    assert (spec["alpha"], spec["c"]) == (1.0, 0.2)
    with pytest.raises(ValueError):
        FlowSpec("torus", {"sigma": 1.0})
    with pytest.raises(ValueError):
        FlowSpec("pendulum")


@pytest.mark.parametrize("kw", [dict(n=1), dict(n=10, dt=0.0), dict(n=10, spinup=-1.0)])
def test_trajectory_config_validation(kw):
    with pytest.raises(ValueError):
        TrajectoryConfig(**kw)


def test_trajectory_consecutive_states_follow_flow():
    flow = FlowSpec("l63")
    traj = generate_trajectory(flow, TrajectoryConfig(n=50, spinup=10.0))
    for k in range(0, 49, 7):
        step = integrate(flow, traj.states[k], traj.dt, tol=1e-12, atol=1e-14)
        np.testing.assert_allclose(step, traj.states[k + 1], atol=1e-7)
    np.testing.assert_array_equal(traj.series, observe(flow, traj.states))
    assert np.all(np.isfinite(traj.states))


def test_torus_trajectory_and_observation():
    traj = generate_trajectory(FlowSpec("torus"), TrajectoryConfig(n=100))
    assert np.all((traj.states >= 0) & (traj.states < 2 * math.pi))
    expected = np.sin(traj.states[:, 0]) * np.cos(traj.states[:, 1])
    np.testing.assert_array_equal(traj.series[:, 0], expected)
    np.testing.assert_allclose(traj.states[7], flow_torus([0, 0], 7 * 0.01), atol=1e-14)


def test_product_observation():
    flow = FlowSpec("product")
    x = np.array([1.0, 2.0, 3.0, 0.5])
    expected = x[:3] + 0.2 * np.array([math.sin(0.5), math.cos(1.0), math.sin(1.0)])
    np.testing.assert_allclose(observe(flow, x), expected, atol=1e-15)
    traj = generate_trajectory(flow, TrajectoryConfig(n=20, spinup=1.0))
    assert np.all((traj.states[:, 3] >= 0) & (traj.states[:, 3] < 2 * math.pi))
    np.testing.assert_allclose(np.diff(np.unwrap(traj.states[:, 3])), 0.01, atol=1e-12)


def test_trajectory_arrays_read_only():
    traj = generate_trajectory(FlowSpec("torus"), TrajectoryConfig(n=10))
    with pytest.raises(ValueError):
        traj.series[0, 0] = 1.0


def test_csv_round_trip(tmp_path, rng):
    series = rng.standard_normal((5, 2))
    path = tmp_path / "s.csv"
    write_series_csv(path, series, 0.01)
    back, dt = read_series_csv(path)
    np.testing.assert_array_equal(back, series)
    assert dt == pytest.approx(0.01)


def test_csv_three_rows_two_columns(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("a,b\n1,2\n3,4\n5,6\n")
    table, dt = read_series_csv(path, dt=0.1)
    assert table.shape == (3, 2) and dt == 0.1


def test_csv_dt_cross_check(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("t,x\n0,1\n0.01,2\n0.02,3\n")
    _, dt = read_series_csv(path, dt=0.01)
    assert dt == 0.01
    with pytest.raises(ValueError, match="does not match"):
        read_series_csv(path, dt=0.02)


@pytest.mark.parametrize("body, match", [
    ("t,x\n0,1\n0.01,2\n0.03,3\n", "row 3"),
    ("x,y\n1,2\n3\n", "fields"),
    ("x,y\n1,2\n3,abc\n", "non-numeric"),
])
def test_csv_errors(tmp_path, body, match):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ValueError, match=match):
        read_series_csv(path)


def test_csv_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        read_series_csv(tmp_path / "nope.csv")


def test_l63_long_spinup_stays_bounded():
    traj = generate_trajectory(FlowSpec("l63"), TrajectoryConfig(n=2000))
    assert np.all(np.abs(traj.states[:, :2]) < 30) and np.all((traj.states[:, 2] > 0) & (traj.states[:, 2] < 60))
    assert dynamics.DEFAULT_SPINUP["l63"] == 4000.0
