"""Walk through the first-order value expansion on the benchmark model.

Affine Sharpe ratio lambda(y) = y with constant volatility 0.2, OU factor
with mean 0 and stationary std 0.4, correlation -0.5, power utility with
gamma = 0.5, horizon 1. For this model every ergodic quantity has a closed
form, so each printed number can be checked by hand.
"""

import numpy as np

from fastmerton import PowerUtility, affine_sharpe_map, build_bundle, ou_factor


def main():
    market = affine_sharpe_map(0.0, 1.0, 0.2)
    factor = ou_factor(m=0.0, nu=0.4, epsilon=0.1, rho=-0.5)
    bundle = build_bundle(market, factor, PowerUtility(0.5), horizon=1.0)

    nu = 0.4
    print("ergodic constants (computed vs closed form):")
    print(f"  lambda_bar = {bundle.lambda_bar:.8f}   exact {nu:.8f}")
    print(f"  B          = {bundle.B:.8f}   exact {-nu * np.sqrt(2) * nu**2:.8f}")

    x0 = 1.0
    v0 = float(bundle.v0(0.0, x0))
    v1 = float(bundle.v1(0.0, x0))
    print("\nvalue expansion at (t, x) = (0, 1):")
    print(f"  v0              = {v0:.8f}   exact {2 * np.exp(0.08):.8f}")
    print(f"  v1              = {v1:.8f}   (negative: rho*B > 0 costs value)")
    print(f"  v0 + sqrt(e) v1 = {float(bundle.first_order_value(0.0, x0)):.8f}")

    print("\nleading-order strategy pi0(0, 1, y) = lambda(y)/sigma * R:")
    for y in (-0.4, 0.0, 0.4):
        print(f"  y = {y:+.1f}: pi0 = {float(np.atleast_1d(bundle.pi0(0.0, x0, y))[0]):+.6f}")


if __name__ == "__main__":
    main()
