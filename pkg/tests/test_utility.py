import numpy as np
import pytest

from fastmerton import MixtureUtility, PowerUtility
from fastmerton.utility import inverse_marginal, terminal_risk_tolerance

X = np.geomspace(0.05, 50.0, 101)


def test_power_closed_forms():
    u = PowerUtility(0.5)
    assert np.allclose(u.u(X), 2.0 * np.sqrt(X))
    assert np.allclose(u.u1(X), X**-0.5)
    assert np.allclose(u.u2(X), -0.5 * X**-1.5)


def test_power_gamma_range_enforced():
    for bad in (0.0, 1.0, -0.3, 1.2):
        with pytest.raises(ValueError):
            PowerUtility(bad)


def test_power_inverse_marginal_roundtrip():
    u = PowerUtility(0.3)
    assert np.allclose(inverse_marginal(u, u.u1(X)), X, rtol=1e-13)


def test_power_terminal_risk_tolerance_exact():
    for gamma in (0.3, 0.5, 0.7):
        u = PowerUtility(gamma)
        assert np.allclose(terminal_risk_tolerance(u, X), X / (1.0 - gamma), rtol=1e-13)


def test_mixture_is_sum_of_powers():
    u = MixtureUtility((0.4, 0.6), (0.3, 0.7))
    expected = 0.4 * X**0.3 / 0.3 + 0.6 * X**0.7 / 0.7
    assert np.allclose(u.u(X), expected, rtol=1e-13)
    assert np.all(np.asarray(u.u1(X)) > 0)
    assert np.all(np.asarray(u.u2(X)) < 0)


def test_mixture_inverse_marginal_roundtrip():
    u = MixtureUtility((0.5, 0.5), (0.2, 0.8))
    y = np.asarray(u.u1(X))
    assert np.allclose(inverse_marginal(u, y), X, rtol=1e-9)


def test_mixture_risk_tolerance_increasing_and_bounded():
    gammas = (0.3, 0.7)
    u = MixtureUtility((0.5, 0.5), gammas)
    r = np.asarray(terminal_risk_tolerance(u, X))
    assert np.all(np.diff(r) > 0)
    k0 = max(1.0 / (1.0 - g) for g in gammas)
    assert np.all(r <= k0 * X * (1 + 1e-12))


def test_asymptotic_elasticity_below_one():
    # x u'(x)/u(x) < 1 at the largest test wealth for every built-in family
    for u in (PowerUtility(0.3), PowerUtility(0.7), MixtureUtility((0.5, 0.5), (0.3, 0.7))):
        x = X[-1]
        assert x * float(np.atleast_1d(u.u1(x))[0]) / float(np.atleast_1d(u.u(x))[0]) < 1.0
