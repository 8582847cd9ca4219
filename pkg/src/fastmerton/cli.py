"""Batch experiment driver.

Parses a flat-key config file, runs one of the pipelines, and writes
machine-readable artifacts into the output directory: ``summary.json``
with every scalar result (field names mirror the producing operations),
plus CSV data files whose columns are documented in ``FORMATS.md``.

Exit codes: 0 success, 2 config/validation error, 3 numerical failure.
All randomness flows from the single seed; reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import value_pde
from .errors import ConfigError, FastMertonError
from .expansion import ExpansionBundle, build_bundle
from .market import (
    FactorModel,
    MarketMap,
    affine_sharpe_map,
    constant_map,
    default_ygrid,
    ou_factor,
    sigmoid_sigma_map,
    validate_model,
)
from .merton import HeatGridSpec, solve_merton_cached
from .simulate import (
    PathConfig,
    compare_family,
    constant_proportion_strategy,
    convergence_slope,
    mc_residual_crn,
    perturbed_strategy,
    pi0_strategy,
    simulate_family,
    simulate_value,
    zero_strategy,
)
from .utility import MixtureUtility, PowerUtility, Utility

SCHEMA_VERSION = 1
KINDS = (
    "solve-merton",
    "inspect-factor",
    "expand",
    "simulate",
    "residual",
    "convergence",
    "compare",
    "pde-value",
)


# --- config parsing --------------------------------------------------------


def parse_config(text: str) -> dict:
    """Flat dotted-key config: one ``key = value`` pair per line, # comments.

    Values are typed by shape: booleans, ints, floats, comma-separated lists
    of floats, bare strings.
    """
    out: dict = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}", f"expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if not key:
            raise ConfigError(f"line {ln}", "empty key")
        if key in out:
            raise ConfigError(key, "duplicate key")
        out[key] = _parse_value(val)
    return out


def _parse_value(val: str):
    low = val.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in val:
        return [_parse_scalar(v.strip()) for v in val.split(",") if v.strip()]
    return _parse_scalar(val)


def _parse_scalar(val: str):
    for cast in (int, float):
        try:
            return cast(val)
        except ValueError:
            continue
    return val


def _require(config: dict, key: str):
    if key not in config:
        raise ConfigError(key, "required key missing")
    return config[key]


def _get(config: dict, key: str, default):
    return config.get(key, default)


def build_market(config: dict) -> MarketMap:
    kind = _require(config, "market.kind")
    if kind == "affine":
        return affine_sharpe_map(
            _require(config, "market.l0"),
            _require(config, "market.l1"),
            _require(config, "market.sigma0"),
        )
    if kind == "constant":
        return constant_map(_require(config, "market.mu"), _require(config, "market.sigma"))
    if kind == "sigmoid":
        return sigmoid_sigma_map(
            _require(config, "market.sigma_min"),
            _require(config, "market.sigma_max"),
            _require(config, "market.lam0"),
        )
    raise ConfigError("market.kind", f"unknown kind {kind!r}")


def build_factor(config: dict) -> FactorModel:
    return ou_factor(
        _require(config, "factor.m"),
        _require(config, "factor.nu"),
        _require(config, "factor.epsilon"),
        _require(config, "factor.rho"),
    )


def build_utility(config: dict) -> Utility:
    kind = _get(config, "utility.kind", "power")
    if kind == "power":
        return PowerUtility(_require(config, "utility.gamma"))
    if kind == "mixture":
        coeffs = _require(config, "utility.coefficients")
        gammas = _require(config, "utility.gammas")
        return MixtureUtility(tuple(np.atleast_1d(coeffs)), tuple(np.atleast_1d(gammas)))
    raise ConfigError("utility.kind", f"unknown kind {kind!r}")


def _validate(config: dict) -> str:
    if _require(config, "schema_version") != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}")
    kind = _require(config, "kind")
    if kind not in KINDS:
        raise ConfigError("kind", f"must be one of {', '.join(KINDS)}")
    return kind


# --- artifact helpers ------------------------------------------------------


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path: str, header: list, columns: list) -> None:
    rows = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _path_config(config: dict, seed: int) -> PathConfig:
    n_steps = _get(config, "sim.n_steps", None)
    return PathConfig(
        n_paths=int(_get(config, "sim.n_paths", 100_000)),
        n_steps=None if n_steps in (None, "auto") else int(n_steps),
        seed=seed,
        antithetic=bool(_get(config, "sim.antithetic", True)),
    )


def _bundle(config: dict, cache_dir: str | None = None) -> ExpansionBundle:
    market = build_market(config)
    factor = build_factor(config)
    utility = build_utility(config)
    horizon = float(_require(config, "horizon"))
    return build_bundle(market, factor, utility, horizon)


def _strategy(config: dict, bundle: ExpansionBundle, prefix: str = "sim"):
    kind = _get(config, f"{prefix}.strategy", "pi0")
    if kind == "pi0":
        return pi0_strategy(bundle, float(_get(config, f"{prefix}.scale", 1.0)))
    if kind == "constant_proportion":
        return constant_proportion_strategy(float(_require(config, f"{prefix}.delta")))
    if kind == "zero":
        return zero_strategy()
    if kind == "perturbed":
        base = pi0_strategy(bundle, float(_get(config, f"{prefix}.scale", 1.0)))
        tilt = constant_proportion_strategy(float(_require(config, f"{prefix}.delta")))
        return perturbed_strategy(
            base, tilt, bundle.epsilon, float(_require(config, f"{prefix}.alpha"))
        )
    raise ConfigError(f"{prefix}.strategy", f"unknown strategy {kind!r}")


# --- pipelines -------------------------------------------------------------


def _run_solve_merton(config, out, seed, cache_dir):
    utility = build_utility(config)
    lam = float(_require(config, "merton.sharpe"))
    horizon = float(_require(config, "horizon"))
    sol = solve_merton_cached(utility, lam, horizon, HeatGridSpec(), cache_dir=cache_dir)
    t_slices = np.atleast_1d(_get(config, "merton.t_slices", [0.0]))
    ts, xs, Ms, Mxs, Rs = [], [], [], [], []
    for t in t_slices:
        ts.append(np.full_like(sol.x_nodes, float(t)))
        xs.append(sol.x_nodes)
        Ms.append(sol.value(float(t), sol.x_nodes))
        Mxs.append(sol.marginal(float(t), sol.x_nodes))
        Rs.append(sol.risk_tolerance(float(t), sol.x_nodes))
    _write_csv(
        os.path.join(out, "merton.csv"),
        ["t", "x", "M", "M_x", "R"],
        [np.concatenate(c) for c in (ts, xs, Ms, Mxs, Rs)],
    )
    x0 = float(_get(config, "x0", 1.0))
    return {
        "solve_merton": {
            "sharpe": lam,
            "value_at_x0": float(sol.value(0.0, x0)),
            "marginal_at_x0": float(sol.marginal(0.0, x0)),
            "risk_tolerance_at_x0": float(sol.risk_tolerance(0.0, x0)),
            "route": sol.meta.get("route", "heat"),
        }
    }


def _run_inspect_factor(config, out, seed, cache_dir):
    market = build_market(config)
    factor = build_factor(config)
    bundle = _bundle(config, cache_dir) if "horizon" in config else None
    ygrid = default_ygrid(factor)
    from .fast_factor import compute_B, invariant_density, solve_poisson

    density = invariant_density(factor, ygrid)
    lam = np.asarray(market.sharpe(ygrid.nodes), dtype=float)
    lbar = float(np.sqrt(density.average(lam**2)))
    theta = solve_poisson(lam**2, factor, density)
    B = compute_B(market, factor, theta, density)
    _write_csv(
        os.path.join(out, "factor.csv"),
        ["y", "phi", "theta", "theta_prime"],
        [ygrid.nodes, density.values, theta.theta, theta.theta_prime],
    )
    return {
        "inspect_factor": {
            "lambda_bar": lbar,
            "B": B,
            "theta_sq_avg": float(density.average(theta.theta**2)),
            "poisson_residual_sup": theta.residual_sup,
        }
    }


def _run_expand(config, out, seed, cache_dir):
    bundle = _bundle(config, cache_dir)
    t = float(_get(config, "expand.t", 0.0))
    y = float(_get(config, "expand.y", _require(config, "factor.m")))
    x = np.geomspace(
        float(_get(config, "expand.x_min", 0.2)),
        float(_get(config, "expand.x_max", 20.0)),
        int(_get(config, "expand.n_x", 121)),
    )
    v0 = np.asarray(bundle.v0(t, x), dtype=float)
    v1 = np.asarray(bundle.v1(t, x), dtype=float)
    pi = np.asarray(bundle.pi0(t, x, y), dtype=float)
    _write_csv(os.path.join(out, "expand.csv"), ["x", "v0", "v1", "pi0"], [x, v0, v1, pi])
    x0 = float(_get(config, "x0", 1.0))
    return {
        "expand": {
            "lambda_bar": bundle.lambda_bar,
            "B": bundle.B,
            "theta_sq_avg": float(bundle.density.average(bundle.theta.theta**2)),
            "v0_at_x0": float(bundle.v0(0.0, x0)),
            "v1_at_x0": float(bundle.v1(0.0, x0)),
            "first_order_value_at_x0": float(bundle.first_order_value(0.0, x0)),
            "pi0_at_x0": float(np.atleast_1d(bundle.pi0(0.0, x0, y))[0]),
        }
    }


def _run_simulate(config, out, seed, cache_dir):
    bundle = _bundle(config, cache_dir)
    strat = _strategy(config, bundle)
    cfg = _path_config(config, seed)
    res = simulate_value(
        strat,
        bundle.market,
        bundle.factor,
        bundle.utility,
        bundle.horizon,
        float(_get(config, "x0", 1.0)),
        float(_get(config, "y0", _require(config, "factor.m"))),
        cfg,
    )
    qs = sorted(res.terminal_quantiles)
    _write_csv(
        os.path.join(out, "diagnostics.csv"),
        ["quantile", "terminal_wealth"],
        [[float(q[1:]) / 100 for q in qs], [res.terminal_quantiles[q] for q in qs]],
    )
    return {
        "simulate": {
            "strategy": strat.name,
            "value": res.value,
            "stderr": res.stderr,
            "n_paths": res.n_paths,
            "n_absorbed": res.n_absorbed,
        }
    }


def _run_residual(config, out, seed, cache_dir):
    bundle = _bundle(config, cache_dir)
    cfg = _path_config(config, seed)
    x0 = float(_get(config, "x0", 1.0))
    y0 = float(_get(config, "y0", _require(config, "factor.m")))
    res = mc_residual_crn(bundle, x0, y0, cfg)
    return {"residual": res}


def _run_convergence(config, out, seed, cache_dir):
    bundle = _bundle(config, cache_dir)
    cfg = _path_config(config, seed)
    x0 = float(_get(config, "x0", 1.0))
    y0 = float(_get(config, "y0", _require(config, "factor.m")))
    epsilons = [float(e) for e in np.atleast_1d(_require(config, "convergence.epsilons"))]
    method = _get(config, "convergence.method", "mc")
    rows = []
    for eps in epsilons:
        b = dataclasses.replace(bundle, factor=bundle.factor.with_epsilon(eps))
        if method == "mc":
            r = mc_residual_crn(b, x0, y0, cfg)
            rows.append((eps, r["residual"], r["stderr"]))
        elif method == "pde":
            r = value_pde.pde_residual(b, eps, x0, y0)
            rows.append((eps, r["residual"], 0.0))
        else:
            raise ConfigError("convergence.method", f"unknown method {method!r}")
    eps_a = [r[0] for r in rows]
    res_a = [r[1] for r in rows]
    se_a = [r[2] for r in rows]
    _write_csv(
        os.path.join(out, "convergence.csv"),
        ["epsilon", "residual", "stderr"],
        [eps_a, res_a, se_a],
    )
    fit = convergence_slope(eps_a, res_a, se_a if method == "mc" else None)
    return {
        "convergence": {
            "method": method,
            "slope": fit["slope"],
            "intercept": fit["intercept"],
            "residuals": {f"eps={e:g}": {"residual": r, "stderr": s} for e, r, s in rows},
        }
    }


def _run_compare(config, out, seed, cache_dir):
    bundle = _bundle(config, cache_dir)
    cfg = _path_config(config, seed)
    x0 = float(_get(config, "x0", 1.0))
    y0 = float(_get(config, "y0", _require(config, "factor.m")))
    alpha = float(_require(config, "compare.alpha"))
    delta = float(_get(config, "compare.tilt_delta", 1.0))
    base_scale = float(_get(config, "compare.base_scale", 1.0))
    epsilons = [float(e) for e in np.atleast_1d(_require(config, "compare.epsilons"))]

    def bundle_for(eps):
        return dataclasses.replace(bundle, factor=bundle.factor.with_epsilon(eps))

    base = None if base_scale == 1.0 else pi0_strategy(bundle, base_scale)
    tilt = constant_proportion_strategy(delta)
    res = compare_family(base, tilt, alpha, epsilons, bundle_for, x0, y0, cfg)
    _write_csv(
        os.path.join(out, "compare.csv"),
        ["epsilon", "delta", "stderr", "delta_over_sqrt_eps"],
        [res["epsilons"], res["deltas"], res["stderrs"], res["deltas_over_sqrt_eps"]],
    )
    return {
        "compare": {
            "alpha": alpha,
            "tilt_delta": delta,
            "base_scale": base_scale,
            "deltas": {
                f"eps={e:g}": {"delta": d, "stderr": s, "delta_over_sqrt_eps": v}
                for e, d, s, v in zip(
                    res["epsilons"], res["deltas"], res["stderrs"], res["deltas_over_sqrt_eps"]
                )
            },
        }
    }


def _run_pde_value(config, out, seed, cache_dir):
    bundle = _bundle(config, cache_dir)
    method = _get(config, "pde.method", "pi0")
    x0 = float(_get(config, "x0", 1.0))
    y0 = float(_get(config, "y0", _require(config, "factor.m")))
    if method == "pi0":
        t_slices = [float(t) for t in np.atleast_1d(_get(config, "pde.t_slices", [0.0]))]
        surf = value_pde.solve_pi0_value(bundle, snapshot_times=t_slices)
        j = int(np.argmin(np.abs(surf.y_nodes - y0)))
        cols_t, cols_x, cols_v = [], [], []
        for t in t_slices:
            k = int(np.argmin(np.abs(surf.snapshot_times - t)))
            cols_t.append(np.full_like(surf.x_nodes, surf.snapshot_times[k]))
            cols_x.append(surf.x_nodes)
            cols_v.append(surf.snapshots[k][:, j])
        _write_csv(
            os.path.join(out, "pde_value.csv"),
            ["t", "x", "V"],
            [np.concatenate(c) for c in (cols_t, cols_x, cols_v)],
        )
        return {
            "pde_value": {
                "method": "pi0",
                "value_at_x0_y0": surf.at(0.0, x0, y0),
                "first_order_value_at_x0": float(bundle.first_order_value(0.0, x0)),
            }
        }
    if method == "averaged":
        scale = float(_get(config, "pde.base_scale", 1.0))
        strat = pi0_strategy(bundle, scale)
        tn, xn, surf = value_pde.solve_averaged_v0(strat, bundle)
        v = float(np.interp(np.log(x0), np.log(xn), surf[0]))
        _write_csv(os.path.join(out, "pde_value.csv"), ["x", "V"], [xn, surf[0]])
        return {
            "pde_value": {
                "method": "averaged",
                "base_scale": scale,
                "value_at_x0": v,
                "v0_at_x0": float(bundle.v0(0.0, x0)),
            }
        }
    if method == "loss2alpha":
        delta = float(_get(config, "pde.tilt_delta", 1.0))
        drift_form = _get(config, "pde.drift_form", "operator")
        tn, xn, w = value_pde.solve_loss_2alpha(
            lambda t, x, y: delta * np.asarray(x, dtype=float) * np.ones_like(np.asarray(y, dtype=float)),
            bundle,
            drift_form=drift_form,
        )
        v = float(np.interp(np.log(x0), np.log(xn), w[0]))
        _write_csv(os.path.join(out, "pde_value.csv"), ["x", "w"], [xn, w[0]])
        return {
            "pde_value": {
                "method": "loss2alpha",
                "tilt_delta": delta,
                "drift_form": drift_form,
                "loss_at_x0": v,
            }
        }
    raise ConfigError("pde.method", f"unknown method {method!r}")


_PIPELINES = {
    "solve-merton": _run_solve_merton,
    "inspect-factor": _run_inspect_factor,
    "expand": _run_expand,
    "simulate": _run_simulate,
    "residual": _run_residual,
    "convergence": _run_convergence,
    "compare": _run_compare,
    "pde-value": _run_pde_value,
}

_NEEDS_FACTOR = {k for k in KINDS if k != "solve-merton"}


def _run_check(config: dict) -> list:
    """Cheap invariant recomputation for --check; returns failure messages."""
    failures = []
    if "factor.m" in config or _require(config, "kind") in _NEEDS_FACTOR:
        market = build_market(config)
        factor = build_factor(config)
        ygrid = default_ygrid(factor)
        report = validate_model(market, factor, ygrid)
        if not report:
            failures.extend(report.messages)
        from .fast_factor import invariant_density, solve_poisson

        density = invariant_density(factor, ygrid)
        mass = float(np.trapezoid(density.values, ygrid.nodes))
        if abs(mass - 1.0) > 1e-8:
            failures.append(f"invariant density mass {mass} != 1")
        lam = np.asarray(market.sharpe(ygrid.nodes), dtype=float)
        theta = solve_poisson(lam**2, factor, density)
        if theta.residual_sup > 1e-3:
            failures.append(f"poisson residual {theta.residual_sup} > 1e-3")
    if "horizon" in config and ("utility.gamma" in config or "utility.gammas" in config):
        utility = build_utility(config)
        x = np.geomspace(0.1, 10, 64)
        if np.any(np.asarray(utility.u2(x)) >= 0):
            failures.append("utility not strictly concave on test grid")
        if np.any(np.diff(np.asarray(utility.u(x))) <= 0):
            failures.append("utility not strictly increasing on test grid")
    return failures


def run(config: dict, out_dir: str, seed: int | None = None, check: bool = False, cache_dir: str | None = None) -> int:
    """Validate the config, execute its pipeline, and write artifacts."""
    kind = _validate(config)
    os.makedirs(out_dir, exist_ok=True)
    effective_seed = int(seed if seed is not None else _get(config, "sim.seed", 0))
    if check:
        failures = _run_check(config)
        if failures:
            for msg in failures:
                print(f"check failed: {msg}", file=sys.stderr)
            return 3
    result = _PIPELINES[kind](config, out_dir, effective_seed, cache_dir)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "seed": effective_seed,
        "config": config,
    }
    summary.update(result)
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fastmerton",
        description="Asymptotic portfolio experiments under a fast mean-reverting factor.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment from a config file")
        p.add_argument("config", help="flat-key config file")
        p.add_argument("--out", default=".", help="output directory for artifacts")
        p.add_argument("--seed", type=int, default=None, help="override sim.seed")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
        p.add_argument("--check", action="store_true", help="recompute cheap invariants first")
        p.add_argument("--cache-dir", default=None, help="binary cache directory")

    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            config = parse_config(fh.read())
        if "kind" in config and config["kind"] != args.subcommand:
            raise ConfigError("kind", f"config says {config['kind']!r}, subcommand is {args.subcommand!r}")
        config["kind"] = args.subcommand
        if args.threads is not None:
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ[var] = str(args.threads)
        return run(config, args.out, seed=args.seed, check=args.check, cache_dir=args.cache_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FastMertonError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
