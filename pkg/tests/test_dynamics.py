import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quasimodo.dynamics import (DelayHistory, TimeGrid, burgers_actuators, burgers_grid,
                                builtin_system, flow_map, rk4_step)
from quasimodo.errors import IntegrationDiverged, InvalidParam, UnknownSystem


def decay():
    return builtin_system("linear", {"A": [[-1.0]]})


def test_duffing_equilibrium_is_fixed():
    sys = builtin_system("duffing", {"alpha": -1.0, "beta": 1.0, "delta": 0.0})
    for dt in (1e-3, 0.1, 1.0):
        assert np.array_equal(rk4_step(sys, [0.0, 0.0], [0.0], dt), [0.0, 0.0])


def test_rk4_on_exponential_decay():
    y = rk4_step(decay(), [1.0], [0.0], 0.1)
    assert abs(y[0] - 0.904837) < 1e-6
    assert abs(y[0] - np.exp(-0.1)) < 1e-7


def test_lorenz_origin_fixed():
    sys = builtin_system("lorenz_affine")
    assert np.array_equal(rk4_step(sys, np.zeros(3), [0.0], 0.01), np.zeros(3))


def test_flow_map_zero_steps_is_empty():
    out = flow_map(decay(), [1.0], np.zeros((0, 1)), TimeGrid(0.0, 0.1, 0))
    assert out.shape == (0, 1)


def test_flow_map_decay_reaches_exp_minus_one():
    out = flow_map(decay(), [1.0], np.zeros((10, 1)), TimeGrid(0.0, 0.1, 10))
    assert abs(out[-1, 0] - np.exp(-1.0)) < 2e-5


def test_rk4_fifth_order_local_error():
    err = [abs(rk4_step(decay(), [1.0], [0.0], h)[0] - np.exp(-h)) for h in (0.2, 0.1)]
    assert 32 * 0.8 <= err[0] / err[1] <= 32 * 1.2


@given(st.integers(0, 12), st.integers(0, 12), st.integers(1, 3))
def test_flow_map_semigroup(p1, p2, sub):
    sys = builtin_system("lorenz_affine")
    rng = np.random.default_rng(p1 * 100 + p2)
    u = rng.uniform(-50, 50, size=(p1 + p2, 1))
    y0 = np.array([1.0, 2.0, 3.0])
    full = flow_map(sys, y0, u, TimeGrid(0.0, 0.01, p1 + p2), sub)
    first = flow_map(sys, y0, u[:p1], TimeGrid(0.0, 0.01, p1), sub)
    mid = y0 if p1 == 0 else first[-1]
    second = flow_map(sys, mid, u[p1:], TimeGrid(0.0, 0.01, p2), sub)
    assert np.array_equal(full, np.concatenate([first, second]) if p1 else second)


def test_equilibrium_stays_put():
    sys = builtin_system("lorenz_affine")
    out = flow_map(sys, np.zeros(3), np.zeros((50, 1)), TimeGrid(0.0, 0.05, 50), 4)
    assert np.max(np.abs(out)) <= 1e-12


def test_lorenz_affine_rhs_hand_value():
    sys = builtin_system("lorenz_affine")
    np.testing.assert_allclose(sys(np.ones(3), np.zeros(1)), [0.0, 26.0, 1.0 - 8.0 / 3.0])


def test_lorenz_cos_uses_cosine_gain():
    sys = builtin_system("lorenz_cos")
    a = sys(np.ones(3), np.array([0.0]))
    b = sys(np.ones(3), np.array([np.pi]))
    assert a[1] - b[1] == pytest.approx(100.0)


def test_mackey_glass_unit_equilibrium():
    sys = builtin_system("mackey_glass")
    assert sys(np.array([1.0]), np.array([0.0]), np.array([1.0]))[0] == pytest.approx(0.0, abs=1e-15)
    hist = DelayHistory.constant([1.0], 0.0, sys.delay)
    out = flow_map(sys, [1.0], np.zeros((20, 1)), TimeGrid(0.0, 0.25, 20), 5, hist)
    assert np.max(np.abs(out - 1.0)) < 1e-12


def test_mackey_glass_reads_delayed_state():
    sys = builtin_system("mackey_glass")
    # history at 0 on [-2, 0), jump to 1 at 0: the delayed term stays 0 for t < 2
    hist = DelayHistory([-2.0, -1e-9, 0.0], [[0.0], [0.0], [1.0]], 2.0)
    out = flow_map(sys, [1.0], np.zeros((4, 1)), TimeGrid(0.0, 0.25, 4), 5, hist)
    np.testing.assert_allclose(out[:, 0], np.exp(-0.25 * np.arange(1, 5)), rtol=1e-6)


def test_delay_history_reproduces_nodes():
    hist = DelayHistory([0.0, 0.5, 1.0, 2.5], [[1.0], [2.0], [-1.0], [4.0]], 2.0)
    for t, y in zip([0.0, 0.5, 1.0, 2.5], [1.0, 2.0, -1.0, 4.0]):
        assert hist(t)[0] == y
    assert hist(0.75)[0] == pytest.approx(0.5)


def test_delay_history_rejects_bad_nodes():
    with pytest.raises(InvalidParam):
        DelayHistory([0.0, 0.0, 1.0], [[0], [0], [0]], 0.5)
    with pytest.raises(InvalidParam):
        DelayHistory([0.0, 1.0], [[0], [0]], 2.0)


def test_burgers_zero_state_zero_rhs():
    sys = builtin_system("burgers1d")
    assert np.array_equal(sys(np.zeros(100), np.zeros(5)), np.zeros(100))


def test_burgers_actuators_partition_unity():
    x, _ = burgers_grid(1.0, 100)
    chi = burgers_actuators(x, 1.0, 5)
    assert np.array_equal(chi.sum(axis=1), np.ones(100))
    assert set(np.unique(chi)) == {0.0, 1.0}


def test_burgers_initial_condition_step():
    sys = builtin_system("burgers1d")
    x, _ = burgers_grid(1.0, 100)
    assert np.array_equal(sys.default_y0, (x <= 0.5).astype(float))


def test_burgers_diffusion_of_single_bump():
    nx = 20
    sys = builtin_system("burgers1d", {"nx": nx, "Re": 10.0})
    x, dx = burgers_grid(1.0, nx)
    y = np.zeros(nx)
    y[5] = 1.0
    g = sys(y, np.zeros(5))
    # -y y_x vanishes at the bump itself, the Laplacian gives -2/(Re dx^2)
    assert g[5] == pytest.approx(-2.0 / (10.0 * dx ** 2))
    assert g[4] == pytest.approx(1.0 / (10.0 * dx ** 2))


def test_unknown_system_and_bad_params():
    with pytest.raises(UnknownSystem):
        builtin_system("pendulum")
    with pytest.raises(InvalidParam):
        builtin_system("lorenz_affine", {"gamma": 1.0})
    with pytest.raises(InvalidParam):
        builtin_system("mackey_glass", {"tau": 0.0})


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_step():
    sys = builtin_system("linear", {"A": [[1e3]]})
    with pytest.raises(IntegrationDiverged) as err:
        flow_map(sys, [1.0], np.zeros((200, 1)), TimeGrid(0.0, 1.0, 200))
    assert err.value.step < 200


def test_flow_map_control_count_checked():
    with pytest.raises(InvalidParam):
        flow_map(decay(), [1.0], np.zeros((3, 1)), TimeGrid(0.0, 0.1, 4))
    with pytest.raises(InvalidParam):
        rk4_step(decay(), [1.0], [0.0], 0.0)


def test_duffing_reference_trace_regression():
    # frozen: Duffing driven by u = -4 from (0.5, 0) for 0.2 time units
    sys = builtin_system("duffing")
    out = flow_map(sys, [0.5, 0.0], -4.0 * np.ones((100, 1)), TimeGrid(0.0, 2e-3, 100))
    # y1'' = y1 - y1^3 - 4; near t=0 the acceleration is 0.5 - 0.125 - 4 = -3.625
    assert out[-1, 0] == pytest.approx(0.5 - 0.5 * 3.625 * 0.2 ** 2, abs=2e-3)
    assert out[-1, 1] < 0
