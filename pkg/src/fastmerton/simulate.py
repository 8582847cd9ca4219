"""Monte Carlo evaluation of trading strategies under the fast factor.

Euler–Maruyama on the pair (wealth, factor) with correlated Brownian
drivers, counter-based streams for reproducibility, antithetic pairing,
and common random numbers when comparing strategies.  The factor step uses
the same time grid as wealth, so the step size must resolve the fast mean
reversion: dt <= epsilon / 20 is enforced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import InconclusiveNoise, NoiseDominated, NumericBlowup, StepTooCoarse
from .expansion import ExpansionBundle
from .market import FactorModel, MarketMap
from .utility import Utility

Array = NDArray[np.float64]

_BLOWUP_FACTOR = 1e12
_QUANTILES = (0.01, 0.25, 0.5, 0.75, 0.99)


@dataclass(frozen=True)
class Strategy:
    """Dollar allocation rule pi(t, X, Y), tagged with a readable name."""

    name: str
    position: Callable[[float, Array, Array], Array]

    def __call__(self, t: float, x: Array, y: Array) -> Array:
        return np.asarray(self.position(t, x, y), dtype=float)


def pi0_strategy(bundle: ExpansionBundle, scale: float = 1.0) -> Strategy:
    """The zeroth-order strategy lambda(Y)/sigma(Y) * R(t, X), optionally scaled."""
    market = bundle.market
    merton = bundle.merton

    def position(t, x, y):
        lam = np.asarray(market.sharpe(y), dtype=float)
        sig = np.asarray(market.sigma(np.asarray(y, dtype=float)), dtype=float)
        return scale * lam / sig * merton.risk_tolerance_slice(t, x)

    name = "pi0" if scale == 1.0 else f"{scale:g}*pi0"
    return Strategy(name=name, position=position)


def constant_proportion_strategy(delta: float) -> Strategy:
    """Invest a fixed fraction of wealth: pi = delta * X."""
    return Strategy(name=f"prop({delta:g})", position=lambda t, x, y: delta * np.asarray(x, dtype=float))


def zero_strategy() -> Strategy:
    """Hold cash."""
    return Strategy(name="zero", position=lambda t, x, y: np.zeros_like(np.asarray(x, dtype=float)))


def perturbed_strategy(
    base: Strategy, tilt: Strategy, epsilon: float, alpha: float
) -> Strategy:
    """Family member base + epsilon^alpha * tilt at a given epsilon."""
    w = epsilon**alpha

    def position(t, x, y):
        return base(t, x, y) + w * tilt(t, x, y)

    return Strategy(name=f"{base.name}+eps^{alpha:g}*{tilt.name}", position=position)


@dataclass(frozen=True)
class PathConfig:
    """Monte Carlo controls.

    ``n_steps=None`` picks the coarsest step satisfying dt <= epsilon/20.
    Antithetic pairing negates both Brownian drivers for the second half of
    every chunk.  Chunks are streamed with independent counter-based keys
    (seed, chunk index), so results are reproducible for a fixed chunk size
    regardless of how many chunks run.
    """

    n_paths: int = 100_000
    n_steps: int | None = None
    seed: int = 0
    antithetic: bool = True
    chunk_size: int = 16_384


@dataclass(frozen=True)
class SimResult:
    """Estimated expected utility of one strategy."""

    name: str
    value: float
    stderr: float
    n_paths: int
    n_absorbed: int
    terminal_quantiles: dict


@dataclass(frozen=True)
class FamilyResult:
    """CRN comparison of several strategies against a reference."""

    results: dict  # name -> SimResult
    reference: str
    deltas: dict  # name -> value - reference value (same paths)
    delta_stderrs: dict


def _resolve_steps(config: PathConfig, horizon: float, epsilon: float) -> int:
    n = config.n_steps
    if n is None:
        n = int(np.ceil(20.0 * horizon / epsilon))
    dt = horizon / n
    if dt > epsilon / 20.0 + 1e-12:
        raise StepTooCoarse(
            f"dt={dt:.4g} exceeds epsilon/20={epsilon / 20:.4g}; increase n_steps"
        )
    return n


def _chunk_sizes(n_paths: int, chunk: int):
    sizes = [chunk] * (n_paths // chunk)
    if n_paths % chunk:
        sizes.append(n_paths % chunk)
    return sizes


def _draw(rng, n_steps: int, m: int, antithetic: bool):
    if antithetic:
        half = (m + 1) // 2
        z1 = rng.standard_normal((n_steps, half))
        z2 = rng.standard_normal((n_steps, half))
        z1 = np.concatenate([z1, -z1], axis=1)[:, :m]
        z2 = np.concatenate([z2, -z2], axis=1)[:, :m]
    else:
        z1 = rng.standard_normal((n_steps, m))
        z2 = rng.standard_normal((n_steps, m))
    return z1, z2


def _y_stepper(factor: FactorModel, dt: float):
    """One factor step sharing the path normals; exact transition for OU.

    The Euler update has weak error O(dt/epsilon), which does not vanish
    along a dt = epsilon/const refinement; the exact OU transition removes it.
    """
    eps = factor.epsilon
    rho = factor.rho
    rho_perp = np.sqrt(1.0 - rho**2)
    if factor.kind == "ou":
        decay = np.exp(-dt / eps)
        svol = factor.nu * np.sqrt(1.0 - decay**2)

        def step(Y, z1k, z2k):
            return factor.m + (Y - factor.m) * decay + svol * (rho * z1k + rho_perp * z2k)

        return step
    sdt = np.sqrt(dt)

    def step(Y, z1k, z2k):
        b = np.asarray(factor.b(Y), dtype=float)
        a = np.asarray(factor.a(Y), dtype=float)
        return Y + b / eps * dt + a / np.sqrt(eps) * (rho * z1k + rho_perp * z2k) * sdt

    return step


def _evolve_chunk(
    strategies: Sequence[Strategy],
    market: MarketMap,
    factor: FactorModel,
    horizon: float,
    x0: float,
    y0: float,
    n_steps: int,
    z1: Array,
    z2: Array,
) -> tuple[Array, Array]:
    """Terminal wealth (n_strategies, m) under shared Brownian increments."""
    m = z1.shape[1]
    dt = horizon / n_steps
    sdt = np.sqrt(dt)
    y_step = _y_stepper(factor, dt)

    X = np.full((len(strategies), m), float(x0))
    alive = np.ones((len(strategies), m), dtype=bool)
    Y = np.full(m, float(y0))
    for k in range(n_steps):
        t = k * dt
        mu = np.asarray(market.mu(Y), dtype=float)
        sig = np.asarray(market.sigma(Y), dtype=float)
        dW = sdt * z1[k]
        for i, strat in enumerate(strategies):
            pi = np.where(alive[i], strat(t, X[i], Y), 0.0)
            X[i] = X[i] + pi * (mu * dt + sig * dW)
            dead = X[i] <= 0.0
            X[i] = np.where(dead, 0.0, X[i])
            alive[i] &= ~dead
        hi = np.max(X)
        if not np.isfinite(hi) or hi > _BLOWUP_FACTOR * x0:
            raise NumericBlowup(f"wealth reached {hi:.3g} at t={t:.4g}")
        Y = y_step(Y, z1[k], z2[k])
    return X, (~alive).sum(axis=1)


def _summarize(name, payoff, x_terminal, n_absorbed) -> SimResult:
    n = payoff.size
    value = float(np.mean(payoff))
    stderr = float(np.std(payoff, ddof=1) / np.sqrt(n))
    q = {f"q{int(100 * p):02d}": float(v) for p, v in zip(_QUANTILES, np.quantile(x_terminal, _QUANTILES))}
    return SimResult(
        name=name,
        value=value,
        stderr=stderr,
        n_paths=n,
        n_absorbed=int(n_absorbed),
        terminal_quantiles=q,
    )


def simulate_family(
    strategies: Sequence[Strategy],
    market: MarketMap,
    factor: FactorModel,
    utility: Utility,
    horizon: float,
    x0: float,
    y0: float,
    config: PathConfig = PathConfig(),
    reference: str | None = None,
) -> FamilyResult:
    """Simulate several strategies on common random numbers.

    Deltas relative to the reference strategy (default: the first) are
    estimated path-by-path, so their standard errors reflect the strong
    positive coupling induced by the shared increments.
    """
    n_steps = _resolve_steps(config, horizon, factor.epsilon)
    names = [s.name for s in strategies]
    if len(set(names)) != len(names):
        raise ValueError("strategy names must be unique")
    ref = reference if reference is not None else names[0]
    if ref not in names:
        raise ValueError(f"reference {ref!r} not among strategies")
    ref_i = names.index(ref)

    payoffs = [[] for _ in strategies]
    terminals = [[] for _ in strategies]
    absorbed = np.zeros(len(strategies), dtype=int)
    for chunk_idx, m in enumerate(_chunk_sizes(config.n_paths, config.chunk_size)):
        rng = np.random.Generator(np.random.Philox(key=[config.seed, chunk_idx]))
        z1, z2 = _draw(rng, n_steps, m, config.antithetic)
        XT, dead = _evolve_chunk(strategies, market, factor, horizon, x0, y0, n_steps, z1, z2)
        absorbed += dead
        for i in range(len(strategies)):
            payoffs[i].append(np.asarray(utility.u(XT[i]), dtype=float))
            terminals[i].append(XT[i])

    payoffs = [np.concatenate(p) for p in payoffs]
    terminals = [np.concatenate(t) for t in terminals]
    results = {
        names[i]: _summarize(names[i], payoffs[i], terminals[i], absorbed[i])
        for i in range(len(strategies))
    }
    deltas, dstderrs = {}, {}
    n = payoffs[0].size
    for i, name in enumerate(names):
        diff = payoffs[i] - payoffs[ref_i]
        deltas[name] = float(np.mean(diff))
        dstderrs[name] = float(np.std(diff, ddof=1) / np.sqrt(n)) if i != ref_i else 0.0
    return FamilyResult(results=results, reference=ref, deltas=deltas, delta_stderrs=dstderrs)


def simulate_value(
    strategy: Strategy,
    market: MarketMap,
    factor: FactorModel,
    utility: Utility,
    horizon: float,
    x0: float,
    y0: float,
    config: PathConfig = PathConfig(),
) -> SimResult:
    """Expected utility of one strategy by chunked Euler–Maruyama."""
    fam = simulate_family([strategy], market, factor, utility, horizon, x0, y0, config)
    return fam.results[strategy.name]


def mc_residual(
    bundle: ExpansionBundle,
    x0: float,
    y0: float,
    config: PathConfig = PathConfig(),
) -> dict:
    """Monte Carlo residual V^pi0 - (v0 + sqrt(eps) v1) at the bundle's epsilon."""
    res = simulate_value(
        pi0_strategy(bundle),
        bundle.market,
        bundle.factor,
        bundle.utility,
        bundle.horizon,
        x0,
        y0,
        config,
    )
    approx = float(bundle.first_order_value(0.0, x0))
    return {
        "epsilon": bundle.epsilon,
        "value": res.value,
        "stderr": res.stderr,
        "first_order": approx,
        "residual": res.value - approx,
    }


def mc_residual_crn(
    bundle: ExpansionBundle,
    x0: float,
    y0: float,
    config: PathConfig = PathConfig(),
) -> dict:
    """CRN estimate of the order-epsilon residual V^pi0 - v0 - sqrt(eps) v1.

    Runs the true model and a frozen-Sharpe reference (lambda(y) = lambda_bar,
    whose exact value is v0) on shared Brownian increments, so the O(eps)
    difference is estimated with a standard error far below either value's
    own noise and most of the wealth-discretization bias cancels.
    """
    factor = bundle.factor
    market = bundle.market
    merton = bundle.merton
    lbar = bundle.lambda_bar
    sig_ref = float(np.atleast_1d(market.sigma(np.array([factor.m])))[0])
    mu_ref = lbar * sig_ref
    utility = bundle.utility
    horizon = bundle.horizon
    n_steps = _resolve_steps(config, horizon, factor.epsilon)
    dt = horizon / n_steps
    sdt = np.sqrt(dt)
    eps = factor.epsilon
    y_step = _y_stepper(factor, dt)

    diffs, absorbed = [], 0
    for chunk_idx, m in enumerate(_chunk_sizes(config.n_paths, config.chunk_size)):
        rng = np.random.Generator(np.random.Philox(key=[config.seed, chunk_idx]))
        z1, z2 = _draw(rng, n_steps, m, config.antithetic)
        X = np.full(m, float(x0))
        Xr = np.full(m, float(x0))
        alive = np.ones(m, dtype=bool)
        alive_r = np.ones(m, dtype=bool)
        Y = np.full(m, float(y0))
        for k in range(n_steps):
            t = k * dt
            mu = np.asarray(market.mu(Y), dtype=float)
            sig = np.asarray(market.sigma(Y), dtype=float)
            lam = mu / sig
            R = merton.risk_tolerance_slice(t, X)
            Rr = merton.risk_tolerance_slice(t, Xr)
            dW = sdt * z1[k]
            pi = np.where(alive, lam / sig * R, 0.0)
            pir = np.where(alive_r, lbar / sig_ref * Rr, 0.0)
            X = X + pi * (mu * dt + sig * dW)
            Xr = Xr + pir * (mu_ref * dt + sig_ref * dW)
            for arr, live in ((X, alive), (Xr, alive_r)):
                dead = arr <= 0.0
                arr[dead] = 0.0
                live &= ~dead
            hi = max(np.max(X), np.max(Xr))
            if not np.isfinite(hi) or hi > _BLOWUP_FACTOR * x0:
                raise NumericBlowup(f"wealth reached {hi:.3g} at t={t:.4g}")
            Y = y_step(Y, z1[k], z2[k])
        diffs.append(np.asarray(utility.u(X), dtype=float) - np.asarray(utility.u(Xr), dtype=float))
        absorbed += int((~alive).sum())

    diff = np.concatenate(diffs)
    mean = float(np.mean(diff))
    stderr = float(np.std(diff, ddof=1) / np.sqrt(diff.size))
    v1 = float(bundle.v1(0.0, x0))
    return {
        "epsilon": eps,
        "delta_vs_reference": mean,
        "stderr": stderr,
        "v1": v1,
        "residual": mean - np.sqrt(eps) * v1,
        "n_absorbed": absorbed,
    }


def convergence_slope(
    epsilons: Sequence[float],
    deltas: Sequence[float],
    stderrs: Sequence[float] | None = None,
    signal_factor: float = 2.0,
) -> dict:
    """Weighted log-log fit of |delta| against epsilon.

    Raises NoiseDominated when any point fails |delta| > signal_factor * stderr,
    since the slope of noise is meaningless.  Weights are inverse variances of
    log|delta| propagated from the stderrs.
    """
    eps = np.asarray(epsilons, dtype=float)
    d = np.asarray(deltas, dtype=float)
    if eps.size != d.size or eps.size < 2:
        raise ValueError("need matching epsilons/deltas with at least two points")
    mag = np.abs(d)
    if stderrs is not None:
        se = np.asarray(stderrs, dtype=float)
        bad = mag <= signal_factor * se
        if np.any(bad):
            worst = int(np.argmax(se / np.maximum(mag, 1e-300)))
            raise NoiseDominated(
                f"|delta|={mag[worst]:.3g} at eps={eps[worst]:.3g} is within "
                f"{signal_factor}x its stderr {se[worst]:.3g}"
            )
        w = (mag / se) ** 2
    else:
        w = np.ones_like(mag)
    A = np.vstack([np.log(eps), np.ones_like(eps)]).T
    Aw = A * np.sqrt(w)[:, None]
    bw = np.log(mag) * np.sqrt(w)
    coef, *_ = np.linalg.lstsq(Aw, bw, rcond=None)
    fitted = A @ coef
    return {
        "slope": float(coef[0]),
        "intercept": float(coef[1]),
        "max_log_misfit": float(np.max(np.abs(fitted - np.log(mag)))),
    }


def compare_family(
    base: Strategy | None,
    tilt: Strategy,
    alpha: float,
    epsilons: Sequence[float],
    bundle_for: Callable[[float], ExpansionBundle],
    x0: float,
    y0: float,
    config: PathConfig = PathConfig(),
    signal_factor: float = 2.0,
) -> dict:
    """Loss of the family base + eps^alpha * tilt relative to the zeroth-order
    strategy, across a ladder of epsilons on common random numbers.

    ``bundle_for(eps)`` must return the expansion bundle at that epsilon
    (the ergodic pieces are epsilon-free, so rebuilding is cheap only if the
    caller caches; see ExpansionBundle and FactorModel.with_epsilon).
    ``base=None`` means the zeroth-order strategy itself.  Returns per-epsilon
    deltas, their standard errors, and the loss rescaled by sqrt(eps); raises
    InconclusiveNoise when every delta is statistically indistinguishable
    from zero so no classification is possible.
    """
    eps_list = [float(e) for e in epsilons]
    deltas, stderrs, scaled = [], [], []
    for eps in eps_list:
        bundle = bundle_for(eps)
        ref = pi0_strategy(bundle)
        base_s = ref if base is None else base
        fam = perturbed_strategy(base_s, tilt, eps, alpha)
        out = simulate_family(
            [ref, fam],
            bundle.market,
            bundle.factor,
            bundle.utility,
            bundle.horizon,
            x0,
            y0,
            config,
        )
        deltas.append(out.deltas[fam.name])
        stderrs.append(out.delta_stderrs[fam.name])
        scaled.append(out.deltas[fam.name] / np.sqrt(eps))
    mag = np.abs(np.asarray(deltas))
    se = np.asarray(stderrs)
    if np.all(mag <= signal_factor * se):
        raise InconclusiveNoise(
            "all family losses are within noise; increase n_paths or widen epsilons"
        )
    return {
        "alpha": alpha,
        "epsilons": eps_list,
        "deltas": deltas,
        "stderrs": stderrs,
        "deltas_over_sqrt_eps": scaled,
    }
