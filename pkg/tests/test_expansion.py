import dataclasses

import numpy as np

from conftest import GAMMA, HORIZON, LAMBDA_BAR, RHO, SIGMA0, power_q, power_v0
from fastmerton import (
    MixtureUtility,
    PowerUtility,
    affine_sharpe_map,
    apply_Dk,
    build_bundle,
    ou_factor,
    solve_merton,
)

X = np.geomspace(0.3, 10.0, 40)
B_EXACT = -LAMBDA_BAR * np.sqrt(2.0) * LAMBDA_BAR**2  # -nu sqrt(2) (2m^2+nu^2), m=0


def test_ergodic_constants(benchmark_bundle):
    b = benchmark_bundle
    assert abs(b.lambda_bar - LAMBDA_BAR) < 1e-12
    assert abs(b.B / B_EXACT - 1.0) < 1e-6


def test_v0_matches_closed_form(benchmark_bundle):
    b = benchmark_bundle
    for t in (0.0, 0.5):
        rel = np.abs(b.v0(t, X) / power_v0(t, X) - 1.0)
        assert np.max(rel) < 1e-3


def test_v1_matches_symbolic(benchmark_bundle):
    # v1 = -tau/2 rho B q^2 v0 for power utility
    b = benchmark_bundle
    q = power_q()
    for t in (0.0, 0.5):
        tau = HORIZON - t
        exact = -0.5 * tau * RHO * B_EXACT * q**2 * power_v0(t, X)
        assert np.max(np.abs(b.v1(t, X) / exact - 1.0)) < 2e-3


def test_v1_sign_structure(benchmark_bundle):
    # v1 carries the sign of -rho B D1^2 v0 pointwise
    b = benchmark_bundle
    d1sq = b.d1sq_v0
    expected_sign = np.sign(-RHO * b.B * d1sq)
    v1 = b.v1_surface
    interior = np.abs(v1) > 1e-12
    assert np.all(np.sign(v1[interior]) == expected_sign[interior])


def test_v1_vanishes_at_terminal_time(benchmark_bundle):
    assert np.max(np.abs(benchmark_bundle.v1(HORIZON, X))) < 1e-12


def test_rho_zero_kills_v1():
    market = affine_sharpe_map(0.0, 1.0, SIGMA0)
    factor = ou_factor(0.0, LAMBDA_BAR, 0.1, 0.0)
    b = build_bundle(market, factor, PowerUtility(GAMMA), HORIZON)
    assert np.max(np.abs(b.v1(0.0, X))) == 0.0


def test_pi0_formula(benchmark_bundle):
    b = benchmark_bundle
    y = np.array([0.4])
    # lambda(y)/sigma * R = y/0.2 * 2x for the benchmark
    expected = 0.4 / SIGMA0 * X / (1 - GAMMA)
    got = b.pi0(0.0, X, y)
    assert np.max(np.abs(got / expected - 1.0)) < 1e-2


def test_pi0_argmax_first_order_condition(benchmark_bundle):
    # sigma^2 pi0 v0_xx + mu v0_x = 0 with v0_xx = -v0_x / R: exact by construction
    b = benchmark_bundle
    y = np.array([0.7])
    mu = float(np.atleast_1d(b.market.mu(y))[0])
    sig = float(np.atleast_1d(b.market.sigma(y))[0])
    v0_x = b.merton.marginal(0.0, X)
    R = b.merton.risk_tolerance(0.0, X)
    pi = b.pi0(0.0, X, y)
    resid = sig**2 * pi * (-v0_x / R) + mu * v0_x
    assert np.max(np.abs(resid) / np.abs(mu * v0_x)) < 1e-10


def test_v1_pde_consistency(benchmark_bundle):
    # L_{t,x}(lbar) v1 = rho B D1^2 v0 / 2, residual shrinking under refinement
    b = benchmark_bundle
    sol = b.merton
    tn = sol.t_nodes
    rhs = 0.5 * RHO * b.B * b.d1sq_v0
    v1 = b.v1_surface
    v1_t = np.gradient(v1, tn, axis=0)
    lhs = v1_t + 0.5 * b.lambda_bar**2 * apply_Dk(sol, 2, v1) + b.lambda_bar**2 * apply_Dk(sol, 1, v1)
    core = (sol.x_nodes > 0.3) & (sol.x_nodes < 10.0)
    mid = slice(tn.size // 4, 3 * tn.size // 4)
    rel = np.abs(lhs - rhs)[mid][:, core] / np.max(np.abs(rhs))
    assert np.max(rel) < 5e-3


def test_v2_v3_match_symbolic(benchmark_bundle):
    b = benchmark_bundle
    q = power_q()
    y = 0.0
    theta0 = float(b.theta(y))
    theta10 = float(b.theta1(y))
    v0 = power_v0(0.0, 1.0)
    v2_exact = -0.5 * theta0 * q * v0
    # (D2/2 + D1) D1^2 v0 = (q - q^2/2) q^2 v0 for power utility
    g3 = (q - 0.5 * q**2) * q**2 * v0
    v3_exact = 0.5 * HORIZON * theta0 * RHO * B_EXACT * g3 + 0.5 * RHO * theta10 * q**2 * v0
    assert abs(float(b.v2_pi0(0.0, 1.0, y)) / v2_exact - 1.0) < 1e-3
    assert abs(float(b.v3_pi0(0.0, 1.0, y)) / v3_exact - 1.0) < 1e-2


def test_first_order_value_combination(benchmark_bundle):
    b = benchmark_bundle
    got = b.first_order_value(0.0, X)
    assert np.allclose(got, b.v0(0.0, X) + np.sqrt(b.epsilon) * b.v1(0.0, X), rtol=1e-14)


def test_bundle_epsilon_swap(benchmark_bundle):
    b = benchmark_bundle
    b2 = dataclasses.replace(b, factor=b.factor.with_epsilon(0.025))
    assert b2.epsilon == 0.025
    assert np.array_equal(b2.v1_surface, b.v1_surface)  # v1 itself is eps-free


def test_commutator_identity_mixture():
    # [L2, D2] w = -lam^2 R^2 R_xx (R w_xx + w_x) on smooth test functions,
    # checked with a mixture utility so R_xx does not vanish
    u = MixtureUtility((0.5, 0.5), (0.3, 0.7))
    lam = 0.4
    sol = solve_merton(u, lam, 1.0)
    x = sol.x_nodes
    lx = np.log(x)

    def dx(f):
        return np.gradient(f, lx, axis=-1) / x

    t_idx = sol.t_nodes.size // 2
    t = sol.t_nodes[t_idx]
    R = sol.R
    w = np.sqrt(x) * (2.0 + np.sin(lx))  # t-independent smooth test function

    def D1(f):
        return R * np.gradient(f, lx, axis=-1) / x

    def D2(f):
        g = np.gradient(f, lx, axis=-1) / x
        return R**2 * (np.gradient(g, lx, axis=-1) / x)

    def L2(f):
        f_t = np.gradient(f, sol.t_nodes, axis=0)
        return f_t + 0.5 * lam**2 * D2(f) + lam**2 * D1(f)

    W = np.tile(w, (sol.t_nodes.size, 1))
    lhs = (L2(D2(W)) - D2(L2(W)))[t_idx]
    R_t = R[t_idx]
    R_xx = dx(dx(sol.R))[t_idx]
    w_x = dx(w)
    w_xx = dx(w_x)
    rhs = -(lam**2) * R_t**2 * R_xx * (R_t * w_xx + w_x)
    core = (x > 0.5) & (x < 5.0)
    scale = np.max(np.abs(rhs[core]))
    assert scale > 1e-6  # the identity must be tested on a nontrivial case
    assert np.max(np.abs(lhs - rhs)[core]) / scale < 5e-2
