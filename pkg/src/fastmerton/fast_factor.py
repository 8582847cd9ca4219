"""Ergodic calculus for the fast factor.

Invariant density, averages <f> = int f dPhi, the averaged Sharpe ratio
lambda_bar = sqrt(<lambda^2>), centered Poisson solutions of
L0 theta = g - <g> with L0 = a^2/2 d^2/dy^2 + b d/dy, and the coupling
constant B = <lambda * a * theta'>.

None of these objects depend on epsilon: they are built from the rescaled
factor whose generator is L0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import cumulative_simpson

from .errors import DensityUnderflow, NonNormalizable
from .market import FactorModel, MarketMap, YGrid

Array = NDArray[np.float64]


@dataclass(frozen=True)
class InvariantDensity:
    """Invariant probability density tabulated on a YGrid."""

    grid: YGrid
    values: Array
    normalization: float

    def average(self, f) -> float:
        """Trapezoid quadrature of f against the density.

        ``f`` may be a callable of y or an array on the grid nodes.  The
        density decays super-polynomially, so the trapezoid rule converges
        spectrally for smooth integrands.
        """
        vals = f(self.grid.nodes) if callable(f) else np.asarray(f, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("integrand not finite on grid")
        return float(np.trapezoid(vals * self.values, self.grid.nodes))


@dataclass(frozen=True)
class PoissonSolution:
    """Solution of L0 theta = g - <g>, centered so that <theta> = 0."""

    grid: YGrid
    theta: Array
    theta_prime: Array
    residual_sup: float

    def __call__(self, y):
        return np.interp(np.asarray(y, dtype=float), self.grid.nodes, self.theta)

    def prime(self, y):
        return np.interp(np.asarray(y, dtype=float), self.grid.nodes, self.theta_prime)


def invariant_density(factor: FactorModel, grid: YGrid) -> InvariantDensity:
    """Phi(y) proportional to exp(int 2b/a^2) / a^2, normalized on the grid."""
    y = grid.nodes
    a2 = np.asarray(factor.a(y), dtype=float) ** 2
    b = np.asarray(factor.b(y), dtype=float)
    potential = np.concatenate(
        ([0.0], cumulative_simpson(2.0 * b / a2, x=y))
    )
    potential -= potential.max()
    unnorm = np.exp(potential) / a2
    mass = float(np.trapezoid(unnorm, y))
    if not np.isfinite(mass) or mass <= 0.0:
        raise NonNormalizable(f"unnormalized mass = {mass!r}")
    return InvariantDensity(grid=grid, values=unnorm / mass, normalization=mass)


def average(f, density: InvariantDensity) -> float:
    """Ergodic average <f> under the invariant density."""
    return density.average(f)


def lambda_bar(market: MarketMap, density: InvariantDensity) -> float:
    """Root-mean-square Sharpe ratio sqrt(<lambda^2>)."""
    lam = market.sharpe(density.grid.nodes)
    return float(np.sqrt(density.average(lam**2)))


def solve_poisson(g, factor: FactorModel, density: InvariantDensity) -> PoissonSolution:
    """Solve L0 theta = g - <g> on the grid, with <theta> = 0.

    Uses the integrating-factor form theta'(y) = 2 F(y) / (a^2(y) Phi(y))
    with F(y) the cumulative integral of (g - <g>) Phi from the left grid
    edge; theta follows by a second cumulative integration.  The source is
    centered with the same quadrature scheme so that F vanishes at the right
    edge exactly, keeping the division by the decaying density stable.
    """
    y = density.grid.nodes
    phi = density.values
    if np.any(phi < 1e-300):
        raise DensityUnderflow("invariant density underflows inside the grid; shrink the range")
    gv = g(y) if callable(g) else np.asarray(g, dtype=float)
    a2 = np.asarray(factor.a(y), dtype=float) ** 2

    cum_gphi = np.concatenate(([0.0], cumulative_simpson(gv * phi, x=y)))
    cum_phi = np.concatenate(([0.0], cumulative_simpson(phi, x=y)))
    g_mean = cum_gphi[-1] / cum_phi[-1]
    flux = cum_gphi - g_mean * cum_phi

    theta_prime = 2.0 * flux / (a2 * phi)
    theta = np.concatenate(([0.0], cumulative_simpson(theta_prime, x=y)))
    theta -= density.average(theta)

    bv = np.asarray(factor.b(y), dtype=float)
    second = np.gradient(theta_prime, density.grid.spacing)
    resid = 0.5 * a2 * second + bv * theta_prime - (gv - g_mean)
    # report the residual where the invariant measure carries mass; in the
    # extreme tails theta' is a ratio of two quantities below 1e-12 and the
    # generator check is numerically meaningless there
    core = density.values >= 1e-6 * density.values.max()
    core[0] = core[-1] = False
    residual_sup = float(np.max(np.abs(resid[core])))
    return PoissonSolution(density.grid, theta, theta_prime, residual_sup)


def compute_B(
    market: MarketMap,
    factor: FactorModel,
    theta: PoissonSolution,
    density: InvariantDensity,
) -> float:
    """Coupling constant B = <lambda * a * theta'>."""
    y = density.grid.nodes
    lam = market.sharpe(y)
    a = np.asarray(factor.a(y), dtype=float)
    return density.average(lam * a * theta.theta_prime)


def solve_theta1(
    market: MarketMap,
    factor: FactorModel,
    theta: PoissonSolution,
    density: InvariantDensity,
) -> PoissonSolution:
    """Second-level Poisson solve: L0 theta1 = a*lambda*theta' - <a*lambda*theta'>."""
    y = density.grid.nodes
    lam = market.sharpe(y)
    a = np.asarray(factor.a(y), dtype=float)
    return solve_poisson(a * lam * theta.theta_prime, factor, density)
