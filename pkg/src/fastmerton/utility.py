"""Investor utilities with analytic derivatives and risk tolerance.

Built-in families are the power utility x^gamma/gamma with 0 < gamma < 1 and
positive mixtures of such terms.  Both are strictly increasing, strictly
concave, vanish at 0+, and satisfy the Inada conditions, which is exactly the
class the asymptotic machinery requires.  Derivatives are always analytic:
the risk tolerance enters fourth-order wealth operators where differencing
noise would compound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateSecondDerivative, NonconvergedInverse


@dataclass(frozen=True)
class Utility:
    """Utility with closed-form first and second derivatives.

    Subclasses provide ``u``, ``u1`` (U'), ``u2`` (U'') vectorized over
    positive wealth.
    """

    def u(self, x):
        raise NotImplementedError

    def u1(self, x):
        raise NotImplementedError

    def u2(self, x):
        raise NotImplementedError

    def inverse_marginal(self, y):
        """x with U'(x) = y, for y > 0."""
        raise NotImplementedError

    def terminal_risk_tolerance(self, x):
        """R(x) = -U'(x)/U''(x)."""
        x = np.asarray(x, dtype=float)
        d2 = np.asarray(self.u2(x), dtype=float)
        if np.any(np.abs(d2) < 1e-300):
            raise DegenerateSecondDerivative("U''(x) underflowed")
        return -np.asarray(self.u1(x), dtype=float) / d2


@dataclass(frozen=True)
class PowerUtility(Utility):
    """U(x) = x^gamma / gamma with 0 < gamma < 1."""

    gamma: float

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    def u(self, x):
        x = np.asarray(x, dtype=float)
        return np.power(x, self.gamma) / self.gamma

    def u1(self, x):
        return np.power(np.asarray(x, dtype=float), self.gamma - 1.0)

    def u2(self, x):
        return (self.gamma - 1.0) * np.power(np.asarray(x, dtype=float), self.gamma - 2.0)

    def inverse_marginal(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0):
            raise NonconvergedInverse("inverse marginal requires y > 0")
        return np.power(y, 1.0 / (self.gamma - 1.0))

    def terminal_risk_tolerance(self, x):
        return np.asarray(x, dtype=float) / (1.0 - self.gamma)


@dataclass(frozen=True)
class MixtureUtility(Utility):
    """U(x) = sum_i c_i x^{gamma_i} / gamma_i with c_i > 0, 0 < gamma_i < 1."""

    coefficients: tuple
    gammas: tuple

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        g = np.asarray(self.gammas, dtype=float)
        if c.shape != g.shape or c.ndim != 1 or c.size == 0:
            raise ValueError("coefficients and gammas must be equal-length 1-d sequences")
        if np.any(c <= 0):
            raise ValueError("mixture coefficients must be positive")
        if np.any((g <= 0) | (g >= 1)):
            raise ValueError("mixture exponents must lie in (0, 1)")
        object.__setattr__(self, "coefficients", tuple(float(v) for v in c))
        object.__setattr__(self, "gammas", tuple(float(v) for v in g))

    def _terms(self, x, order: int):
        x = np.asarray(x, dtype=float)[..., None]
        c = np.asarray(self.coefficients)
        g = np.asarray(self.gammas)
        if order == 0:
            return (c / g) * np.power(x, g)
        if order == 1:
            return c * np.power(x, g - 1.0)
        if order == 2:
            return c * (g - 1.0) * np.power(x, g - 2.0)
        raise ValueError(order)

    def u(self, x):
        return self._terms(x, 0).sum(axis=-1)

    def u1(self, x):
        return self._terms(x, 1).sum(axis=-1)

    def u2(self, x):
        return self._terms(x, 2).sum(axis=-1)

    def inverse_marginal(self, y):
        """Bracketed root of U'(x) = y, solved per component on log x.

        U' is strictly decreasing and spans (0, inf), so the bracket always
        exists; it is expanded geometrically from a power-law initial guess.
        """
        y_arr = np.asarray(y, dtype=float)
        if np.any(y_arr <= 0):
            raise NonconvergedInverse("inverse marginal requires y > 0")
        scalar = y_arr.ndim == 0
        out = np.empty(np.atleast_1d(y_arr).shape, dtype=float)
        g_max = max(self.gammas)
        for i, yi in enumerate(np.atleast_1d(y_arr)):
            f = lambda t: self.u1(np.exp(t)) - yi
            t0 = np.log(np.power(yi / sum(self.coefficients), 1.0 / (g_max - 1.0)))
            lo, hi = t0 - 1.0, t0 + 1.0
            for _ in range(200):
                if f(lo) > 0 >= f(hi) or f(lo) >= 0 > f(hi):
                    break
                if f(lo) <= 0:
                    lo -= 2.0
                if f(hi) > 0:
                    hi += 2.0
            else:
                raise NonconvergedInverse(f"no bracket for y={yi!r}")
            out.flat[i] = np.exp(brentq(f, lo, hi, xtol=1e-15, rtol=1e-14))
        return float(out[0]) if scalar else out


def inverse_marginal(utility: Utility, y):
    """Functional form of :meth:`Utility.inverse_marginal`."""
    return utility.inverse_marginal(y)


def terminal_risk_tolerance(utility: Utility, x):
    """Functional form of :meth:`Utility.terminal_risk_tolerance`."""
    return utility.terminal_risk_tolerance(x)
