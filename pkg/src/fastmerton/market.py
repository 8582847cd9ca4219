"""Market maps mu(y), sigma(y) and the fast mean-reverting factor model.

The risky asset has drift ``mu(Y_t)`` and volatility ``sigma(Y_t)`` driven by
a factor ``Y`` with drift ``b(Y)/eps`` and diffusion ``a(Y)/sqrt(eps)``.  The
instantaneous Sharpe ratio is ``lambda(y) = mu(y)/sigma(y)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy.interpolate import PchipInterpolator

from .errors import NonPositiveVolatility

Array = NDArray[np.float64]


@dataclass(frozen=True)
class MarketMap:
    """Drift and volatility of the risky asset as functions of the factor."""

    kind: str
    mu: Callable[[Array], Array]
    sigma: Callable[[Array], Array]
    params: dict = field(default_factory=dict)

    def sharpe(self, y):
        """Sharpe ratio lambda(y) = mu(y)/sigma(y)."""
        y = np.asarray(y, dtype=float)
        sig = np.asarray(self.sigma(y), dtype=float)
        if np.any(sig <= 0.0):
            raise NonPositiveVolatility(f"sigma(y) <= 0 encountered for map kind={self.kind!r}")
        return np.asarray(self.mu(y), dtype=float) / sig


def sharpe(market: MarketMap, y):
    """Functional form of :meth:`MarketMap.sharpe`."""
    return market.sharpe(y)


def constant_map(mu: float, sigma: float) -> MarketMap:
    """Constant drift and volatility (classical Merton market)."""
    if sigma <= 0:
        raise NonPositiveVolatility("constant map requires sigma > 0")
    return MarketMap(
        kind="constant",
        mu=lambda y: np.full_like(np.asarray(y, dtype=float), mu),
        sigma=lambda y: np.full_like(np.asarray(y, dtype=float), sigma),
        params={"mu": mu, "sigma": sigma},
    )


def affine_sharpe_map(l0: float, l1: float, sigma0: float) -> MarketMap:
    """Constant volatility with an affine Sharpe ratio lambda(y) = l0 + l1*y.

    The drift is mu(y) = (l0 + l1*y) * sigma0.  ``l0=0, l1=1`` gives the
    benchmark lambda(y) = y used throughout the experiment suite.
    """
    if sigma0 <= 0:
        raise NonPositiveVolatility("affine map requires sigma0 > 0")
    return MarketMap(
        kind="affine",
        mu=lambda y: (l0 + l1 * np.asarray(y, dtype=float)) * sigma0,
        sigma=lambda y: np.full_like(np.asarray(y, dtype=float), sigma0),
        params={"l0": l0, "l1": l1, "sigma0": sigma0},
    )


def sigmoid_sigma_map(sigma_min: float, sigma_max: float, lam0: float) -> MarketMap:
    """Bounded volatility sigma(y) in (sigma_min, sigma_max) at constant Sharpe lam0.

    Useful for reduction tests: lambda(y) is constant while the wealth
    diffusion coefficient still depends on y.
    """
    if sigma_min <= 0 or sigma_max <= sigma_min:
        raise NonPositiveVolatility("sigmoid map requires 0 < sigma_min < sigma_max")

    def _sigma(y):
        y = np.asarray(y, dtype=float)
        return sigma_min + (sigma_max - sigma_min) / (1.0 + np.exp(-y))

    return MarketMap(
        kind="sigmoid",
        mu=lambda y: lam0 * _sigma(y),
        sigma=_sigma,
        params={"sigma_min": sigma_min, "sigma_max": sigma_max, "lam0": lam0},
    )


def tabulated_map(y_nodes, mu_values, sigma_values) -> MarketMap:
    """Monotone-cubic interpolation of tabulated (mu, sigma) samples."""
    y_nodes = np.asarray(y_nodes, dtype=float)
    mu_i = PchipInterpolator(y_nodes, np.asarray(mu_values, dtype=float), extrapolate=True)
    sig_i = PchipInterpolator(y_nodes, np.asarray(sigma_values, dtype=float), extrapolate=True)
    return MarketMap(
        kind="tabulated",
        mu=lambda y: np.asarray(mu_i(y), dtype=float),
        sigma=lambda y: np.asarray(sig_i(y), dtype=float),
        params={"y_nodes": y_nodes},
    )


@dataclass(frozen=True)
class FactorModel:
    """Fast factor dY = b(Y)/eps dt + a(Y)/sqrt(eps) dW^Y, corr(W, W^Y) = rho."""

    b: Callable[[Array], Array]
    a: Callable[[Array], Array]
    epsilon: float
    rho: float
    kind: str = "custom"
    m: float = 0.0
    nu: float = 1.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")

    def with_epsilon(self, epsilon: float) -> "FactorModel":
        """Same factor dynamics on a different timescale."""
        return FactorModel(self.b, self.a, epsilon, self.rho, self.kind, self.m, self.nu)


def ou_factor(m: float, nu: float, epsilon: float, rho: float) -> FactorModel:
    """Ornstein-Uhlenbeck factor: b(y) = m - y, a(y) = nu*sqrt(2).

    Its invariant distribution is Normal(m, nu^2).
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    a_val = nu * np.sqrt(2.0)
    return FactorModel(
        b=lambda y: m - np.asarray(y, dtype=float),
        a=lambda y: np.full_like(np.asarray(y, dtype=float), a_val),
        epsilon=epsilon,
        rho=rho,
        kind="ou",
        m=m,
        nu=nu,
    )


@dataclass(frozen=True)
class YGrid:
    """Uniform factor grid with trapezoid quadrature weights."""

    nodes: Array

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("grid needs at least 3 nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @property
    def spacing(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    @property
    def weights(self) -> Array:
        w = np.full(self.nodes.size, self.spacing)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w


def default_ygrid(factor: FactorModel, n_sigmas: float = 8.0, n_nodes: int = 801) -> YGrid:
    """Grid spanning n_sigmas invariant standard deviations around the mean.

    Gaussian mass beyond 8 sigma is below 1e-15, so quadrature truncation is
    negligible against PDE error.
    """
    return YGrid(np.linspace(factor.m - n_sigmas * factor.nu, factor.m + n_sigmas * factor.nu, n_nodes))


@dataclass(frozen=True)
class ValidationReport:
    """Node-wise positivity scan of the market map and factor diffusion."""

    passed: bool
    sigma_violations: Array
    a_violations: Array
    messages: tuple

    def __bool__(self) -> bool:
        return self.passed


def validate_model(market: MarketMap, factor: FactorModel, grid: YGrid) -> ValidationReport:
    """Check sigma > 0, a > 0, and finite lambda on every grid node."""
    y = grid.nodes
    sig = np.asarray(market.sigma(y), dtype=float)
    a = np.asarray(factor.a(y), dtype=float)
    bad_sigma = y[~(sig > 0.0)]
    bad_a = y[~(a > 0.0)]
    messages = []
    if bad_sigma.size:
        messages.append(f"sigma(y) <= 0 at {bad_sigma.size} nodes, first y={bad_sigma[0]:.6g}")
    if bad_a.size:
        messages.append(f"a(y) <= 0 at {bad_a.size} nodes, first y={bad_a[0]:.6g}")
    if not bad_sigma.size:
        lam = np.asarray(market.mu(y), dtype=float) / sig
        if not np.all(np.isfinite(lam)):
            messages.append("lambda(y) not finite on grid")
    passed = not messages
    return ValidationReport(passed, bad_sigma, bad_a, tuple(messages))
