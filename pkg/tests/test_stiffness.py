import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vinesim.stiffness import (LinearStiffnessParams, NeuralStiffnessParams, WrinklingParams, eps_from_pressure,
                               moment, moment_from_wrinkle_angle, onset_angle, wrinkle_angle, wrinkling_moment,
                               wrinkling_moment_derivative)


def unit_tube(eps, pressure=1.0, radius=1.0):
    return WrinklingParams(pressure=pressure, tube_radius=radius, eps_override=eps)


def closed_form(gamma, p=1.0, r=1.0):
    """Direct evaluation of the wrinkled-tube moment, used as an oracle."""
    return math.pi * p * r**3 * (math.sin(2 * gamma) + 2 * math.pi - 2 * gamma) / (
        4 * (math.sin(gamma) + (math.pi - gamma) * math.cos(gamma)))


def test_wrinkle_angle_zero_at_onset():
    assert wrinkle_angle(math.pi / 3, 0.5) == pytest.approx(0.0, abs=1e-7)
    assert wrinkle_angle(0.9 * math.pi / 3, 0.5) == 0.0


def test_wrinkle_angle_small_threshold_limit():
    assert wrinkle_angle(math.pi / 2, 1e-12) == pytest.approx(math.pi, abs=1e-5)


def test_wrinkle_angle_hand_value():
    want = math.acos(0.2 / math.sin(math.pi / 4) - 1)
    assert wrinkle_angle(math.pi / 2, 0.1) == pytest.approx(want, abs=1e-12)
    assert wrinkle_angle(math.pi / 2, 0.1) == pytest.approx(2.3705, abs=1e-4)


@pytest.mark.parametrize("theta", [-0.1, math.pi + 1e-9, float("nan")])
def test_wrinkle_angle_domain(theta):
    with pytest.raises(ValueError):
        wrinkle_angle(theta, 0.1)


def test_moment_at_onset_is_half_full():
    p = unit_tube(0.3)
    assert wrinkling_moment(onset_angle(0.3), p) == pytest.approx(math.pi / 2, abs=1e-9)
    assert moment_from_wrinkle_angle(0.0) == pytest.approx(math.pi / 2, abs=1e-12)


def test_moment_at_quarter_turn_wrinkle():
    assert moment_from_wrinkle_angle(math.pi / 2) == pytest.approx(math.pi**2 / 4, abs=1e-12)
    assert moment_from_wrinkle_angle(math.pi / 2) == pytest.approx(closed_form(math.pi / 2), abs=1e-12)


def test_moment_matches_closed_form_across_range():
    for g in np.linspace(0.0, math.pi - 0.1, 40):
        assert moment_from_wrinkle_angle(g) == pytest.approx(closed_form(g), rel=1e-10)


def test_fully_wrinkled_limit():
    assert moment_from_wrinkle_angle(math.pi) == pytest.approx(math.pi)
    assert moment_from_wrinkle_angle(math.pi - 1e-7) == pytest.approx(math.pi, rel=1e-9)


def test_moment_linear_in_pressure():
    for th in (0.2, 1.0, 2.5):
        one = wrinkling_moment(th, WrinklingParams(1.5, 0.02, eps_override=0.1))
        two = wrinkling_moment(th, WrinklingParams(3.0, 0.02, eps_override=0.1))
        assert two == pytest.approx(2 * one, rel=1e-12)


def test_pre_wrinkle_ramp():
    p = unit_tube(0.2)
    th_w = onset_angle(0.2)
    assert wrinkling_moment(0.5 * th_w, p) == pytest.approx(math.pi / 4)
    assert wrinkling_moment(0.0, p) == 0.0


@pytest.mark.parametrize("eps", [0.01, 0.05, 0.1, 0.2])
def test_moment_monotone_on_dense_grid(eps):
    th = np.linspace(0, math.pi - 1e-3, 10_000)
    m = wrinkling_moment(th, unit_tube(eps))
    assert np.all(np.diff(m) >= -1e-12)
    assert np.all(m >= 0) and np.all(m <= math.pi * (1 + 1e-12))


def test_smaller_threshold_gives_larger_moment():
    th = np.linspace(onset_angle(0.2), math.pi, 500)
    m = [wrinkling_moment(th, unit_tube(e)) for e in (0.01, 0.05, 0.1, 0.2)]
    for a, b in zip(m, m[1:]):
        assert np.all(a >= b - 1e-12)


def test_approaches_full_moment_for_small_threshold():
    assert wrinkling_moment(math.pi, unit_tube(1e-4)) / math.pi == pytest.approx(1.0, abs=1e-3)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 0.95), st.floats(1e-2, 1e3), st.floats(1e-3, 1.0))
def test_ratio_bounds_and_onset_continuity(eps, pressure, radius):
    p = WrinklingParams(pressure, radius, eps_override=eps)
    full = p.full_moment
    th_w = onset_angle(eps)
    below = wrinkling_moment(np.nextafter(th_w, 0), p)
    above = wrinkling_moment(th_w, p)
    assert abs(above - below) < 1e-9 * full
    grid = wrinkling_moment(np.linspace(0, math.pi, 64), p) / full
    assert np.all((grid >= 0) & (grid <= 1 + 1e-12))


@pytest.mark.parametrize("eps", [0.02, 0.1, 0.3])
def test_derivative_matches_finite_differences(eps):
    p = unit_tube(eps)
    th_w = onset_angle(eps)
    h = 1e-6
    for th in np.linspace(0.05, math.pi - 0.05, 60):
        if abs(th - th_w) < 1e-3:
            continue
        fd = (wrinkling_moment(th + h, p) - wrinkling_moment(th - h, p)) / (2 * h)
        an = wrinkling_moment_derivative(th, p)
        assert an == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_eps_polynomial_examples():
    assert eps_from_pressure(1234.0, (0.1, 0, 0, 0)).value == 0.1
    assert eps_from_pressure(1000.0, (0, 1e-4, 0, 0)).value == pytest.approx(0.1, abs=1e-15)
    assert eps_from_pressure(1e6, (0, 1, 0, 0)).value == 1 - 1e-4
    assert eps_from_pressure(1.0, (-1, 0, 0, 0)).value == 1e-4


def test_eps_polynomial_extrapolation_flag():
    est = eps_from_pressure(5e4, (0.1, 0, 0, 0), (1e3, 2e4))
    assert est.extrapolated and est.value == 0.1
    assert not eps_from_pressure(5e3, (0.1, 0, 0, 0), (1e3, 2e4)).extrapolated


def test_wrinkling_params_reject_invalid():
    with pytest.raises(ValueError):
        WrinklingParams(-1.0, 0.1)
    with pytest.raises(ValueError):
        WrinklingParams(1.0, 0.1, eps_override=1.2)
    with pytest.raises(ValueError):
        LinearStiffnessParams(-0.5)


def test_linear_moment_example():
    assert moment(LinearStiffnessParams(2.0), 0.3, 1.0, 0.5) == pytest.approx(-1.1, abs=1e-15)


def test_zero_angle_gives_zero_torque():
    assert moment(LinearStiffnessParams(3.0), 0.0) == 0.0
    assert moment(unit_tube(0.1), 0.0) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, math.pi))
def test_wrinkling_torque_is_odd(theta):
    p = WrinklingParams(2e4, 0.03, eps_override=0.07)
    assert moment(p, -theta) == -moment(p, theta)


def test_perceptron_moment_matches_manual_forward():
    net = NeuralStiffnessParams.initialize(seed=3)
    th = 0.4
    want = net.b2 + np.sum(net.w2 * np.tanh(net.w1 * th + net.b1))
    assert moment(net, th) == pytest.approx(-want, abs=1e-14)
    assert len(net.w1) == 10


def test_perceptron_rejects_non_finite():
    with pytest.raises(ValueError):
        NeuralStiffnessParams(np.ones(10), np.ones(10), np.full(10, np.nan))
