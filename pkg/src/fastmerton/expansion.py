"""Asymptotic objects: v0, v1, the strategy pi0, and diagnostic correctors.

Everything is driven by the Merton solution at the averaged Sharpe ratio
lambda_bar and the ergodic constants of the fast factor:

    v0(t, x)   = M(t, x; lambda_bar)
    v1(t, x)   = -(T - t)/2 * rho * B * D1^2 v0
    pi0        = lambda(y)/sigma(y) * R(t, x; lambda_bar)
    v2 term    = -theta(y)/2 * D1 v0
    v3 term    = (T - t)/2 * theta(y) * rho * B * (D2/2 + D1) D1^2 v0
                 + rho/2 * theta1(y) * D1^2 v0

with the free integration constants of the corrector terms set to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import OutOfRange
from .fast_factor import (
    InvariantDensity,
    PoissonSolution,
    compute_B,
    invariant_density,
    solve_poisson,
    solve_theta1,
)
from .market import FactorModel, MarketMap, YGrid, default_ygrid
from .merton import HeatGridSpec, MertonSolution, apply_Dk, solve_merton
from .utility import Utility

Array = NDArray[np.float64]


def _interp_surface(sol: MertonSolution, surface: Array, t: float, x):
    x = np.asarray(x, dtype=float)
    if np.any(x < sol.x_nodes[0]) or np.any(x > sol.x_nodes[-1]):
        raise OutOfRange("wealth outside tabulated range")
    i, w = sol._time_weights(t)
    row = (1.0 - w) * surface[i] + w * surface[i + 1]
    return np.interp(np.log(x), sol.log_x, row)


@dataclass(frozen=True)
class ExpansionBundle:
    """Precomputed expansion data for one (market, factor, utility) triple."""

    market: MarketMap
    factor: FactorModel
    utility: Utility
    density: InvariantDensity
    lambda_bar: float
    B: float
    theta: PoissonSolution
    theta1: PoissonSolution
    merton: MertonSolution
    d1_v0: Array       # D1 v0 surface
    d1sq_v0: Array     # D1^2 v0 surface
    g3_v0: Array       # (D2/2 + D1) D1^2 v0 surface
    v1_surface: Array

    @property
    def epsilon(self) -> float:
        return self.factor.epsilon

    @property
    def rho(self) -> float:
        return self.factor.rho

    @property
    def horizon(self) -> float:
        return self.merton.horizon

    def v0(self, t: float, x):
        """Leading-order value M(t, x; lambda_bar)."""
        return self.merton.value(t, x)

    def v1(self, t: float, x):
        """First-order correction from the explicit product formula."""
        return _interp_surface(self.merton, self.v1_surface, t, x)

    def first_order_value(self, t: float, x):
        """v0 + sqrt(eps) * v1 at the bundle's epsilon."""
        return self.v0(t, x) + np.sqrt(self.epsilon) * self.v1(t, x)

    def pi0(self, t: float, x, y):
        """Zeroth-order dollar allocation lambda(y)/sigma(y) * R(t, x)."""
        lam = self.market.sharpe(y)
        sig = np.asarray(self.market.sigma(np.asarray(y, dtype=float)), dtype=float)
        return lam / sig * self.merton.risk_tolerance(t, x)

    def v2_pi0(self, t: float, x, y):
        """Second corrector -theta(y)/2 * D1 v0 (integration constant zero)."""
        return -0.5 * self.theta(y) * _interp_surface(self.merton, self.d1_v0, t, x)

    def v3_pi0(self, t: float, x, y):
        """Third corrector (integration constant zero)."""
        tau = self.horizon - t
        term1 = 0.5 * tau * self.theta(y) * self.rho * self.B
        g3 = _interp_surface(self.merton, self.g3_v0, t, x)
        d1sq = _interp_surface(self.merton, self.d1sq_v0, t, x)
        return term1 * g3 + 0.5 * self.rho * self.theta1(y) * d1sq


def build_bundle(
    market: MarketMap,
    factor: FactorModel,
    utility: Utility,
    horizon: float,
    ygrid: YGrid | None = None,
    heat_grid: HeatGridSpec = HeatGridSpec(),
    x_nodes: Array | None = None,
) -> ExpansionBundle:
    """Assemble the full expansion bundle for one model configuration."""
    if ygrid is None:
        ygrid = default_ygrid(factor)
    density = invariant_density(factor, ygrid)
    lam = market.sharpe(ygrid.nodes)
    lbar = float(np.sqrt(density.average(lam**2)))
    theta = solve_poisson(lam**2, factor, density)
    B = compute_B(market, factor, theta, density)
    theta1 = solve_theta1(market, factor, theta, density)
    merton = solve_merton(utility, lbar, horizon, heat_grid, x_nodes)

    d1 = apply_Dk(merton, 1, merton.M)
    d1sq = apply_Dk(merton, 1, d1)
    g3 = 0.5 * apply_Dk(merton, 2, d1sq) + apply_Dk(merton, 1, d1sq)
    tau = (horizon - merton.t_nodes)[:, None]
    v1_surface = -0.5 * tau * factor.rho * B * d1sq

    return ExpansionBundle(
        market=market,
        factor=factor,
        utility=utility,
        density=density,
        lambda_bar=lbar,
        B=B,
        theta=theta,
        theta1=theta1,
        merton=merton,
        d1_v0=d1,
        d1sq_v0=d1sq,
        g3_v0=g3,
        v1_surface=v1_surface,
    )


def v0(bundle: ExpansionBundle, t: float, x):
    return bundle.v0(t, x)


def v1(bundle: ExpansionBundle, t: float, x):
    return bundle.v1(t, x)


def pi0(bundle: ExpansionBundle, market: MarketMap, t: float, x, y):
    lam = market.sharpe(y)
    sig = np.asarray(market.sigma(np.asarray(y, dtype=float)), dtype=float)
    return lam / sig * bundle.merton.risk_tolerance(t, x)


def v2_pi0(bundle: ExpansionBundle, t: float, x, y):
    return bundle.v2_pi0(t, x, y)


def v3_pi0(bundle: ExpansionBundle, t: float, x, y):
    return bundle.v3_pi0(t, x, y)


def first_order_value(bundle: ExpansionBundle, t: float, x):
    return bundle.first_order_value(t, x)
