import numpy as np
import pytest

from fastmerton import (
    HeatGridSpec,
    MixtureUtility,
    PowerUtility,
    apply_Dk,
    closed_form_power,
    solve_hjb_direct,
    solve_merton,
)
from fastmerton.errors import OutOfRange
from fastmerton.merton import solve_merton_cached

XPROBE = np.geomspace(0.2, 20.0, 60)


def _rel_sup(a, b):
    return float(np.max(np.abs(a - b) / np.abs(b)))


def test_heat_route_matches_closed_form_power():
    for gamma in (0.3, 0.7):
        cf = closed_form_power(gamma, 0.4, 1.0)
        sol = solve_merton(PowerUtility(gamma), 0.4, 1.0)
        for t in (0.0, 0.5, 0.9):
            assert _rel_sup(sol.value(t, XPROBE), cf.value(t, XPROBE)) < 1e-2
            assert _rel_sup(sol.risk_tolerance(t, XPROBE), XPROBE / (1 - gamma)) < 1e-2


def test_direct_hjb_matches_closed_form_power():
    cf = closed_form_power(0.5, 0.4, 1.0)
    sol = solve_hjb_direct(PowerUtility(0.5), 0.4, 1.0)
    assert _rel_sup(sol.value(0.0, XPROBE), cf.value(0.0, XPROBE)) < 1e-2


def test_heat_route_second_order_refinement():
    # sup error against the closed form drops by ~4x when halving both steps
    u = PowerUtility(0.5)
    cf = closed_form_power(0.5, 0.4, 1.0)
    errs = []
    for n_z, n_t in ((801, 100), (3201, 400)):
        sol = solve_merton(u, 0.4, 1.0, HeatGridSpec(n_z=n_z, n_t=n_t))
        errs.append(_rel_sup(sol.value(0.0, XPROBE), cf.value(0.0, XPROBE)))
    order = np.log(errs[0] / errs[1]) / np.log(4.0)
    assert order >= 1.7


def test_mixture_routes_agree():
    u = MixtureUtility((0.5, 0.5), (0.3, 0.7))
    heat = solve_merton(u, 0.4, 1.0)
    direct = solve_hjb_direct(u, 0.4, 1.0)
    assert _rel_sup(heat.value(0.0, XPROBE), direct.value(0.0, XPROBE)) < 1e-2


def test_concavity_monotonicity_every_slice():
    sol = solve_merton(MixtureUtility((0.5, 0.5), (0.3, 0.7)), 0.4, 1.0)
    assert np.all(sol.M_x > 0)        # increasing in wealth
    assert np.all(sol.R > 0)          # concave: M_xx = -M_x / R < 0
    assert np.all(np.diff(sol.M, axis=1) > 0)


def test_risk_tolerance_increasing_and_bounded_mixture():
    gammas = (0.3, 0.7)
    sol = solve_merton(MixtureUtility((0.5, 0.5), gammas), 0.4, 1.0)
    k0 = max(1.0 / (1.0 - g) for g in gammas)
    r = sol.risk_tolerance(0.0, XPROBE)
    assert np.all(np.diff(r) > 0)
    assert np.all(r <= k0 * XPROBE * 1.01)


def test_risk_tolerance_derivative_bounds():
    # |R^j d^{j+1}R/dx^{j+1}| stays bounded on the probe grid for j <= 2
    sol = solve_merton(MixtureUtility((0.5, 0.5), (0.3, 0.7)), 0.4, 1.0)
    x = sol.x_nodes
    r = sol.R[0]
    d = r
    for j in range(3):
        d = np.gradient(d, x)
        core = (x > 0.2) & (x < 20.0)
        assert np.all(np.isfinite((r**j * d)[core]))
        assert np.max(np.abs((r**j * d)[core])) < 1e3


def test_d1_equals_minus_d2():
    sol = solve_merton(PowerUtility(0.5), 0.4, 1.0)
    d1 = apply_Dk(sol, 1, sol.M)
    d2 = apply_Dk(sol, 2, sol.M)
    core = (sol.x_nodes > 0.2) & (sol.x_nodes < 20.0)
    rel = np.abs(d1 + d2)[:, core] / np.abs(d1)[:, core]
    assert np.max(rel) < 5e-3


def test_apply_Dk_power_eigenvalue():
    gamma = 0.5
    q = gamma / (1 - gamma)
    sol = solve_merton(PowerUtility(gamma), 0.4, 1.0)
    d1 = apply_Dk(sol, 1, sol.M)
    core = (sol.x_nodes > 0.2) & (sol.x_nodes < 20.0)
    rel = np.abs(d1 - q * sol.M)[:, core] / np.abs(sol.M)[:, core]
    assert np.max(rel) < 5e-3


def test_apply_Dk_rejects_large_order():
    sol = solve_merton(PowerUtility(0.5), 0.4, 1.0)
    with pytest.raises(ValueError):
        apply_Dk(sol, 5, sol.M)


def test_out_of_range_guard():
    sol = solve_merton(PowerUtility(0.5), 0.4, 1.0)
    with pytest.raises(OutOfRange):
        sol.value(0.0, np.array([1e6]))
    with pytest.raises(OutOfRange):
        sol.value(2.5, np.array([1.0]))


def test_risk_tolerance_slice_extrapolates():
    sol = solve_merton(PowerUtility(0.5), 0.4, 1.0)
    x = np.array([sol.x_nodes[0] * 0.1, sol.x_nodes[-1] * 3.0])
    r = sol.risk_tolerance_slice(0.0, x)
    assert np.allclose(r, 2.0 * x, rtol=2e-2)


def test_merton_disk_cache_roundtrip(tmp_path):
    u = PowerUtility(0.5)
    fresh = solve_merton_cached(u, 0.4, 1.0, cache_dir=str(tmp_path))
    cached = solve_merton_cached(u, 0.4, 1.0, cache_dir=str(tmp_path))
    assert cached.meta.get("cache") == "hit"
    assert np.array_equal(fresh.M, cached.M)
    assert np.array_equal(fresh.R, cached.R)
