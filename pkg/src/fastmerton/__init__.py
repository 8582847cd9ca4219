"""Asymptotic portfolio construction under a fast mean-reverting market factor.

The package builds the zeroth-order strategy and first-order value
approximation for general utilities, and verifies both the order-epsilon
accuracy of the approximation and the asymptotic-optimality hierarchy over
perturbed strategy families, by linear-PDE solves and Monte Carlo.
"""

from . import errors
from .expansion import ExpansionBundle, build_bundle
from .fast_factor import (
    InvariantDensity,
    PoissonSolution,
    average,
    compute_B,
    invariant_density,
    lambda_bar,
    solve_poisson,
    solve_theta1,
)
from .market import (
    FactorModel,
    MarketMap,
    ValidationReport,
    YGrid,
    affine_sharpe_map,
    constant_map,
    default_ygrid,
    ou_factor,
    sharpe,
    sigmoid_sigma_map,
    tabulated_map,
    validate_model,
)
from .merton import (
    HeatGridSpec,
    HeatSurface,
    MertonSolution,
    apply_Dk,
    build_merton,
    closed_form_power,
    risk_tolerance,
    solve_heat,
    solve_hjb_direct,
    solve_merton,
)
from .utility import MixtureUtility, PowerUtility, Utility

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
