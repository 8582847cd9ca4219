import dataclasses

import numpy as np
import pytest

from conftest import GAMMA, HORIZON, SIGMA0, X0, Y0, power_v0
from fastmerton import PowerUtility, build_bundle, constant_map, ou_factor
from fastmerton.errors import NoiseDominated, NumericBlowup, StepTooCoarse
from fastmerton.simulate import (
    PathConfig,
    Strategy,
    constant_proportion_strategy,
    convergence_slope,
    mc_residual_crn,
    perturbed_strategy,
    pi0_strategy,
    simulate_family,
    simulate_value,
    zero_strategy,
)

CFG = PathConfig(n_paths=40_000, seed=42)


@pytest.fixture(scope="module")
def constant_bundle():
    # constant Sharpe ratio: the zeroth-order value is exact at every epsilon
    market = constant_map(0.4 * SIGMA0, SIGMA0)
    factor = ou_factor(0.0, 0.4, 0.1, -0.5)
    return build_bundle(market, factor, PowerUtility(GAMMA), HORIZON)


def _run(bundle, strategy, config=CFG):
    return simulate_value(
        strategy, bundle.market, bundle.factor, bundle.utility,
        bundle.horizon, X0, Y0, config,
    )


def test_zero_strategy_exact(constant_bundle):
    res = _run(constant_bundle, zero_strategy())
    assert res.value == float(constant_bundle.utility.u(X0))
    assert res.stderr == 0.0
    assert res.n_absorbed == 0


def test_determinism_bitwise(constant_bundle):
    a = _run(constant_bundle, pi0_strategy(constant_bundle))
    b = _run(constant_bundle, pi0_strategy(constant_bundle))
    assert a.value == b.value and a.stderr == b.stderr
    assert a.terminal_quantiles == b.terminal_quantiles


def test_crn_identical_strategies_exact_zero(constant_bundle):
    base = pi0_strategy(constant_bundle)
    clone = perturbed_strategy(base, zero_strategy(), constant_bundle.epsilon, 0.5)
    fam = simulate_family(
        [base, clone], constant_bundle.market, constant_bundle.factor,
        constant_bundle.utility, HORIZON, X0, Y0, CFG,
    )
    assert fam.deltas[clone.name] == 0.0


def test_constant_sharpe_recovers_merton_value(constant_bundle):
    res = _run(constant_bundle, pi0_strategy(constant_bundle), PathConfig(n_paths=200_000, seed=1))
    exact = power_v0(0.0, X0)
    assert abs(res.value - exact) < 3.5 * res.stderr
    assert res.stderr < 3e-3


def test_step_too_coarse_rejected(constant_bundle):
    with pytest.raises(StepTooCoarse):
        _run(constant_bundle, zero_strategy(), PathConfig(n_paths=100, n_steps=10, seed=0))


def test_numeric_blowup_guard():
    market = constant_map(1.0, 0.01)
    factor = ou_factor(0.0, 0.4, 0.5, 0.0)
    bundle_free = (market, factor, PowerUtility(GAMMA))
    huge = constant_proportion_strategy(1e6)
    with pytest.raises(NumericBlowup):
        simulate_value(huge, market, factor, PowerUtility(GAMMA), HORIZON, X0, Y0,
                       PathConfig(n_paths=256, seed=0))


def test_absorbed_paths_contribute_zero(constant_bundle):
    # an enormous constant dollar bet forces absorption on many paths
    bet = Strategy(name="big_bet", position=lambda t, x, y: np.full_like(np.asarray(x, float), 50.0))
    res = _run(constant_bundle, bet, PathConfig(n_paths=4_000, seed=9))
    assert res.n_absorbed > 0
    assert np.isfinite(res.value)
    assert res.terminal_quantiles["q01"] == 0.0


def test_antithetic_agreement_and_variance(constant_bundle):
    strat = pi0_strategy(constant_bundle)
    on = _run(constant_bundle, strat, PathConfig(n_paths=100_000, seed=3, antithetic=True))
    off = _run(constant_bundle, strat, PathConfig(n_paths=100_000, seed=3, antithetic=False))
    assert abs(on.value - off.value) < 3.5 * np.hypot(on.stderr, off.stderr)
    assert on.stderr <= off.stderr * 1.05


def test_weak_convergence_halved_step(constant_bundle):
    strat = pi0_strategy(constant_bundle)
    n0 = 200  # dt = eps/20 at eps = 0.1
    coarse = _run(constant_bundle, strat, PathConfig(n_paths=100_000, seed=5, n_steps=n0))
    fine = _run(constant_bundle, strat, PathConfig(n_paths=100_000, seed=5, n_steps=2 * n0))
    assert abs(coarse.value - fine.value) < 2.0 * np.hypot(coarse.stderr, fine.stderr)


def test_mc_residual_crn_orders(benchmark_bundle):
    out = mc_residual_crn(benchmark_bundle, X0, Y0, PathConfig(n_paths=100_000, seed=7))
    # at eps = 0.1 the residual is a few 1e-3 while v1's contribution is ~1.5e-2
    assert abs(out["residual"]) < 0.02
    assert abs(out["delta_vs_reference"] - np.sqrt(0.1) * out["v1"]) < 0.02


def test_convergence_slope_recovers_power_law():
    eps = np.array([0.4, 0.2, 0.1, 0.05])
    fit = convergence_slope(eps, -0.04 * eps**1.1, 0.001 * eps)
    assert abs(fit["slope"] - 1.1) < 1e-9


def test_convergence_slope_noise_dominated():
    eps = [0.4, 0.2]
    with pytest.raises(NoiseDominated):
        convergence_slope(eps, [1e-5, 1e-5], [1e-4, 1e-4])
