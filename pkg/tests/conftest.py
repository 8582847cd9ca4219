import numpy as np
import pytest

from fastmerton import (
    PowerUtility,
    affine_sharpe_map,
    build_bundle,
    ou_factor,
)

# benchmark configuration shared across suites: power utility, Sharpe map
# lambda(y) = y, OU factor, negative correlation
GAMMA = 0.5
SIGMA0 = 0.2
M, NU = 0.0, 0.4
RHO = -0.5
HORIZON = 1.0
X0, Y0 = 1.0, 0.0
LAMBDA_BAR = NU  # sqrt(<y^2>) under N(0, nu^2)


@pytest.fixture(scope="session")
def benchmark_bundle():
    market = affine_sharpe_map(0.0, 1.0, SIGMA0)
    factor = ou_factor(M, NU, 0.1, RHO)
    return build_bundle(market, factor, PowerUtility(GAMMA), HORIZON)


def power_v0(t, x, gamma=GAMMA, lam=LAMBDA_BAR, horizon=HORIZON):
    """Closed-form leading-order value for power utility."""
    tau = horizon - t
    return x**gamma / gamma * np.exp(0.5 * lam**2 * gamma / (1.0 - gamma) * tau)


def power_q(gamma=GAMMA):
    """D1 eigenvalue for power utility: D1 v0 = q v0."""
    return gamma / (1.0 - gamma)
