import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from intcl.estimator import (DivergenceError, Gains, cached_learning_term, control_input,
                             dcl_term, estimate_state_derivative, gradient_term, icl_term)
from intcl.memory import HistoryStack, IntegrationBuffer, StackEntry, WindowSample
from intcl.model import TWO_STATE, TWO_STATE_TRAJECTORY

finite = st.floats(-10, 10, allow_nan=False)


def test_gains_validation():
    Gains(np.eye(2), np.eye(4), 0.1)
    with pytest.raises(ValueError):
        Gains(np.diag([1.0, -1.0]), np.eye(4), 0.1)
    with pytest.raises(ValueError):
        Gains(np.eye(2), np.eye(4), 0.0)
    with pytest.raises(ValueError):
        Gains(np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(4), 0.1)
    with pytest.raises(ValueError):
        Gains(np.eye(2), np.zeros((4, 4)), 0.1)


def test_control_zero_error_zero_regressor():
    g = Gains.scaled_identity(2, 4, 3.0, 1.0, 0.1)
    u = control_input([0.0, 0.0], 0.0, np.ones(4), TWO_STATE_TRAJECTORY, g, TWO_STATE)
    np.testing.assert_allclose(u, TWO_STATE_TRAJECTORY.x_d_dot(0.0))


def test_control_hand_value():
    # x_d(0) = 0, Y(x=(1,0), 0) theta_hat = 0, K = I; only the ramp derivative survives
    g = Gains.scaled_identity(2, 4, 1.0, 1.0, 0.1)
    u = control_input([1.0, 0.0], 0.0, np.zeros(4), TWO_STATE_TRAJECTORY, g, TWO_STATE)
    np.testing.assert_allclose(u, np.array([-1.0, 0.0]) + TWO_STATE_TRAJECTORY.x_d_dot(0.0))


def test_control_linear_in_K():
    x, t, th = np.array([0.4, -0.3]), 2.0, np.zeros(4)
    u5 = control_input(x, t, th, TWO_STATE_TRAJECTORY, Gains.scaled_identity(2, 4, 5, 1, .1), TWO_STATE)
    u10 = control_input(x, t, th, TWO_STATE_TRAJECTORY, Gains.scaled_identity(2, 4, 10, 1, .1), TWO_STATE)
    u0 = TWO_STATE_TRAJECTORY.x_d_dot(t) - TWO_STATE.regressor(x, t) @ th
    np.testing.assert_allclose(u10 - u0, 2 * (u5 - u0))


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_control_non_finite_raises():
    g = Gains.scaled_identity(2, 4, 1.0, 1.0, 0.1)
    with pytest.raises(DivergenceError) as exc:
        control_input([1e200, 1e200], 3.0, np.ones(4), TWO_STATE_TRAJECTORY, g, TWO_STATE)
    assert exc.value.t == 3.0


def test_gradient_term_examples():
    g2 = Gains(np.eye(2), 2 * np.eye(4), 0.1)
    Y = np.array([[1.0, 0, 0, 0], [0, 0, 1, 0]])
    np.testing.assert_array_equal(gradient_term(Y, np.zeros(2), g2), np.zeros(4))
    np.testing.assert_array_equal(gradient_term(Y, [1.0, 1.0], g2), [2, 0, 2, 0])
    sq = Gains(np.eye(3), np.eye(3), 0.1)
    e = np.array([0.3, -1.2, 4.0])
    np.testing.assert_array_equal(gradient_term(np.eye(3), e, sq), e)
    with pytest.raises(ValueError):
        gradient_term(np.ones((3, 4)), [1.0, 1.0], g2)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (2, 4), elements=finite), arrays(float, 2, elements=finite),
       arrays(float, 2, elements=finite), st.floats(-3, 3))
def test_gradient_term_linear(Y, e1, e2, a):
    g = Gains(np.eye(2), np.diag([1.0, 2.0, 0.5, 3.0]), 0.1)
    lhs = gradient_term(Y, a * e1 + e2, g)
    rhs = a * gradient_term(Y, e1, g) + gradient_term(Y, e2, g)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
    np.testing.assert_allclose(gradient_term(Y, e1, g), g.Gamma @ Y.T @ e1, atol=1e-12)


def _stack(m=3, n=3, N=5):
    return HistoryStack(N, m, n)


def test_icl_term_examples():
    g = Gains(np.eye(3), np.eye(3), 1.0)
    s = _stack()
    np.testing.assert_array_equal(icl_term(s, np.ones(3), g), np.zeros(3))
    s.try_record(StackEntry(1.0, np.eye(3), np.ones(3) + 0.5, 0.5 * np.ones(3)))
    np.testing.assert_allclose(icl_term(s, np.zeros(3), g), np.ones(3))


def test_icl_term_vanishes_at_truth(rng):
    theta = np.array([5.0, 10.0, 15.0, 20.0])
    A = rng.normal(size=(2, 4))
    U = rng.normal(size=2)
    s = HistoryStack(4, 4, 2)
    s.try_record(StackEntry(1.0, A, A @ theta + U, U))
    g = Gains.scaled_identity(2, 4, 1, 1.5, 0.2)
    np.testing.assert_allclose(icl_term(s, theta, g), 0.0, atol=1e-12)


def test_icl_term_affine_and_cached(rng):
    s = HistoryStack(6, 4, 2)
    for i in range(6):
        s.try_record(StackEntry(i + 1.0, rng.normal(size=(2, 4)), rng.normal(size=2), rng.normal(size=2)))
    g = Gains(np.eye(2), np.diag([1.0, 2.0, 0.5, 1.5]), 0.07)
    a, b = rng.normal(size=4), rng.normal(size=4)
    diff = icl_term(s, a, g) - icl_term(s, b, g)
    np.testing.assert_allclose(diff, -g.k_cl * g.Gamma @ s.gram @ (a - b), atol=1e-12)
    np.testing.assert_allclose(cached_learning_term(s, a, g), icl_term(s, a, g), atol=1e-12)


def test_icl_sign_pattern_invariant_under_gain_scaling(rng):
    s = HistoryStack(5, 4, 2)
    for i in range(5):
        s.try_record(StackEntry(i + 1.0, rng.normal(size=(2, 4)), rng.normal(size=2), rng.normal(size=2)))
    th = rng.normal(size=4)
    base = icl_term(s, th, Gains(np.eye(2), np.eye(4), 0.1))
    for scale in (1e-3, 0.5, 7.0, 1e3):
        scaled = icl_term(s, th, Gains(np.eye(2), np.eye(4), 0.1 * scale))
        assert np.array_equal(np.sign(scaled), np.sign(base))


def test_dcl_term_examples():
    g = Gains(np.eye(2), np.eye(2), 1.0)
    s = HistoryStack(3, 2, 2)
    np.testing.assert_array_equal(dcl_term(s, np.zeros(2), g), np.zeros(2))
    s.try_record(StackEntry(0.1, np.eye(2), np.array([3.0, 2.0]), np.array([2.0, 1.0])))
    np.testing.assert_allclose(dcl_term(s, np.zeros(2), g), [1.0, 1.0])
    theta = np.array([1.5, -2.0])
    Y = np.array([[1.0, 2.0], [0.5, -1.0]])
    u = np.array([0.2, 0.1])
    s2 = HistoryStack(3, 2, 2)
    s2.try_record(StackEntry(0.1, Y, Y @ theta + u, u))
    np.testing.assert_allclose(dcl_term(s2, theta, g), 0.0, atol=1e-14)


def _fill(signal, h, t0, t1, n=2, span=None):
    ts = t0 + h * np.arange(int(round((t1 - t0) / h)) + 1)
    buf = IntegrationBuffer(n, 1, span or (t1 - t0), h)
    for t in ts:
        buf.push_sample(WindowSample(t, signal(t), np.zeros((n, 1)), np.zeros(n)))
    return buf, ts


@pytest.mark.parametrize("w", [0.1, 0.5])
def test_derivative_exact_on_linear(w):
    h = 0.0004
    buf, ts = _fill(lambda t: np.array([t, 2 * t]), h, 30.0, 31.2)
    for t_q in (30.6, 30.8, ts[len(ts) // 2]):
        est = estimate_state_derivative(buf, w, t_q)
        np.testing.assert_allclose(est, [1.0, 2.0], atol=1e-12, rtol=0)


def test_derivative_of_constant_is_zero():
    buf, _ = _fill(lambda t: np.array([3.0, -1.0]), 0.001, 0.0, 1.0)
    np.testing.assert_array_equal(estimate_state_derivative(buf, 0.2, 0.5), [0.0, 0.0])


def test_derivative_of_sine_at_origin():
    h, w = 0.0004, 0.1
    buf, _ = _fill(lambda t: np.array([np.sin(t)]), h, -0.2, 0.2, n=1)
    est = estimate_state_derivative(buf, w, 0.0)
    # boxcar of width w attenuates cos by about w^2/24
    assert abs(est[0] - 1.0) <= w ** 2 / 12
    assert abs(est[0] - 1.0) > 0


def test_derivative_not_ready():
    buf, _ = _fill(lambda t: np.array([t, t]), 0.001, 0.0, 0.3)
    assert estimate_state_derivative(buf, 0.5, 0.15) is None
    assert estimate_state_derivative(buf, 0.1, 0.3) is None
    assert estimate_state_derivative(buf, 0.1, 0.2) is not None
