"""Constant-Sharpe-ratio Merton problem for a general utility.

Primary route: the value function's marginal can be parametrized through a
space-time harmonic surface H(z, t) solving the backward heat equation
H_t + lambda^2/2 H_zz = 0 with terminal datum H(z, T) = I(e^{-z}), where I
inverts the marginal utility.  Then, with tau = T - t,

    x(z, t)        = H(z, t)
    R(t, x(z, t))  = H_z(z, t)
    M_x(t, x(z,t)) = exp(-z - lambda^2 tau / 2)

and M itself follows by integrating M_x in x plus the time-anchor ODE
M_t = -lambda^2/2 * R * M_x at a reference wealth.  The exponential damping
factor in M_x is forced by consistency of the parametrization with the
terminal datum (it cancels in R, which is why the heat surface alone pins
the risk tolerance); it is cross-validated here against the closed-form
power solution and a direct nonlinear-HJB march.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.interpolate import PchipInterpolator
from scipy.linalg import solve_banded

from .errors import (
    BoundaryTooNarrow,
    ConvexityLoss,
    InversionFailure,
    MonotonicityLoss,
    OutOfRange,
    StencilOverflow,
)
from .utility import PowerUtility, Utility

Array = NDArray[np.float64]


@dataclass(frozen=True)
class HeatGridSpec:
    """Discretization of the heat-equation route."""

    n_z: int = 1601
    n_t: int = 400
    x_min_target: float = 1e-3
    x_max_target: float = 1e3
    z_margin: float = 4.0


@dataclass(frozen=True)
class HeatSurface:
    """Backward heat solution H and its z-derivatives on a (t, z) grid."""

    sharpe: float
    horizon: float
    t_nodes: Array
    z_nodes: Array
    H: Array       # shape (n_t, n_z)
    H_z: Array
    H_zz: Array
    utility: Utility


@dataclass(frozen=True)
class MertonSolution:
    """Tabulated Merton value M, marginal M_x and risk tolerance R.

    Surfaces are stored on a fixed time grid and a log-uniform wealth grid;
    evaluation interpolates linearly in t and (monotonically) in log-wealth.
    """

    sharpe: float
    horizon: float
    t_nodes: Array
    x_nodes: Array
    M: Array       # shape (n_t, n_x)
    M_x: Array
    R: Array
    R_x: Array
    utility: Utility
    meta: dict = field(default_factory=dict)

    @property
    def log_x(self) -> Array:
        return np.log(self.x_nodes)

    def _time_weights(self, t: float):
        if not self.t_nodes[0] - 1e-12 <= t <= self.t_nodes[-1] + 1e-12:
            raise OutOfRange(f"t={t} outside [{self.t_nodes[0]}, {self.t_nodes[-1]}]")
        i = int(np.clip(np.searchsorted(self.t_nodes, t) - 1, 0, self.t_nodes.size - 2))
        w = (t - self.t_nodes[i]) / (self.t_nodes[i + 1] - self.t_nodes[i])
        return i, float(np.clip(w, 0.0, 1.0))

    def _interp(self, surface: Array, t: float, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.x_nodes[0]) or np.any(x > self.x_nodes[-1]):
            raise OutOfRange("wealth outside tabulated range")
        i, w = self._time_weights(t)
        row = (1.0 - w) * surface[i] + w * surface[i + 1]
        return np.interp(np.log(x), self.log_x, row)

    def value(self, t: float, x):
        return self._interp(self.M, t, x)

    def marginal(self, t: float, x):
        return self._interp(self.M_x, t, x)

    def risk_tolerance(self, t: float, x):
        r = self._interp(self.R, t, x)
        return r

    def risk_tolerance_slice(self, t: float, x: Array) -> Array:
        """Vectorized R(t, x) without per-call validation, for simulation loops.

        Outside the tabulated range R is extended linearly: proportionally
        through the origin below, and with the edge slope above.
        """
        i, w = self._time_weights(t)
        row = (1.0 - w) * self.R[i] + w * self.R[i + 1]
        slope_top = (1.0 - w) * self.R_x[i, -1] + w * self.R_x[i + 1, -1]
        x = np.asarray(x, dtype=float)
        out = np.interp(np.log(np.clip(x, self.x_nodes[0], self.x_nodes[-1])), self.log_x, row)
        lo = x < self.x_nodes[0]
        hi = x > self.x_nodes[-1]
        if np.any(lo):
            out[lo] = row[0] * x[lo] / self.x_nodes[0]
        if np.any(hi):
            out[hi] = row[-1] + slope_top * (x[hi] - self.x_nodes[-1])
        return out


def risk_tolerance(sol: MertonSolution, t: float, x):
    """Interpolated R(t, x); positive and increasing in x."""
    return sol.risk_tolerance(t, x)


def _thomas(lower, diag, upper, rhs):
    """Tridiagonal solve via LAPACK banded storage."""
    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1, :] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs)


def _log_terminal_slope(utility: Utility, z: float, h: float = 1e-4) -> float:
    """d/dz log I(e^{-z}) at z, by a centered difference of the exact datum."""
    lo = np.log(utility.inverse_marginal(np.exp(-(z - h))))
    hi = np.log(utility.inverse_marginal(np.exp(-(z + h))))
    return float((hi - lo) / (2.0 * h))


def solve_heat(
    utility: Utility,
    sharpe: float,
    horizon: float,
    grid: HeatGridSpec = HeatGridSpec(),
) -> HeatSurface:
    """Crank-Nicolson solve of H_t + lambda^2/2 H_zz = 0, backward from T.

    The terminal datum I(e^{-z}) maps z in R onto x in (0, inf) (Inada), so
    the surface is strictly increasing in z.  Boundary values evolve with the
    locally exact exponential growth rate exp(lambda^2 kappa^2 tau / 2) where
    kappa is the log-slope of the terminal datum at the edge; for power-type
    tails this is exact.
    """
    if sharpe <= 0:
        raise ValueError("sharpe must be positive (use a tiny value for the zero limit)")
    u1 = utility.u1
    z_lo = -np.log(float(u1(grid.x_min_target * 0.5))) - grid.z_margin
    z_hi = -np.log(float(u1(grid.x_max_target * 2.0))) + grid.z_margin
    if z_lo >= z_hi:
        raise BoundaryTooNarrow("transformed range is empty; check targets")
    z = np.linspace(z_lo, z_hi, grid.n_z)
    terminal = np.asarray(utility.inverse_marginal(np.exp(-z)), dtype=float)
    if terminal[0] > grid.x_min_target or terminal[-1] < grid.x_max_target:
        raise BoundaryTooNarrow("terminal datum does not bracket the wealth targets")

    kappa_lo = _log_terminal_slope(utility, z_lo)
    kappa_hi = _log_terminal_slope(utility, z_hi)

    dz = z[1] - z[0]
    dt = horizon / grid.n_t
    t_nodes = np.linspace(0.0, horizon, grid.n_t + 1)
    mu = 0.5 * sharpe**2 * dt / dz**2

    n = grid.n_z - 2
    lower = np.full(n, -0.5 * mu)
    diag = np.full(n, 1.0 + mu)
    upper = np.full(n, -0.5 * mu)

    H = np.empty((grid.n_t + 1, grid.n_z))
    H[-1] = terminal
    cur = terminal.copy()
    for k in range(grid.n_t - 1, -1, -1):
        tau = horizon - t_nodes[k]
        b_lo = terminal[0] * np.exp(0.5 * sharpe**2 * kappa_lo**2 * tau)
        b_hi = terminal[-1] * np.exp(0.5 * sharpe**2 * kappa_hi**2 * tau)
        rhs = cur[1:-1] + 0.5 * mu * (cur[2:] - 2.0 * cur[1:-1] + cur[:-2])
        rhs[0] += 0.5 * mu * b_lo
        rhs[-1] += 0.5 * mu * b_hi
        interior = _thomas(lower, diag, upper, rhs)
        cur = np.concatenate(([b_lo], interior, [b_hi]))
        H[k] = cur

    H_z = np.gradient(H, dz, axis=1)
    if np.any(H_z <= 0.0):
        raise MonotonicityLoss("H_z <= 0 somewhere; refine the z grid")
    H_zz = np.gradient(H_z, dz, axis=1)
    return HeatSurface(sharpe, horizon, t_nodes, z, H, H_z, H_zz, utility)


def default_x_grid(x_min: float = 1e-2, x_max: float = 5e2, n: int = 321) -> Array:
    return np.geomspace(x_min, x_max, n)


def build_merton(
    H: HeatSurface,
    utility: Utility,
    x_nodes: Array | None = None,
    x_ref: float = 1.0,
) -> MertonSolution:
    """Assemble M, M_x, R on a fixed wealth grid from the heat surface.

    M is anchored at M(T, .) = U(.) and propagated at a reference wealth via
    M_t = -lambda^2/2 * R * M_x, then extended across each time slice by
    integrating M_x in wealth.
    """
    if x_nodes is None:
        x_nodes = default_x_grid()
    x_nodes = np.asarray(x_nodes, dtype=float)
    lam, T = H.sharpe, H.horizon
    t_nodes = H.t_nodes
    nt = t_nodes.size

    # M_x on the moving parametrized nodes, per slice.
    tau = (T - t_nodes)[:, None]
    mx_param = np.exp(-H.z_nodes[None, :] - 0.5 * lam**2 * tau)

    # anchor ODE at x_ref
    r_ref = np.empty(nt)
    mx_ref = np.empty(nt)
    for i in range(nt):
        xs = H.H[i]
        if not xs[0] < x_ref < xs[-1]:
            raise InversionFailure(f"reference wealth {x_ref} outside slice image")
        r_ref[i] = np.interp(np.log(x_ref), np.log(xs), H.H_z[i])
        mx_ref[i] = np.interp(np.log(x_ref), np.log(xs), mx_param[i])
    dMdt = -0.5 * lam**2 * r_ref * mx_ref
    m_ref = np.empty(nt)
    m_ref[-1] = float(utility.u(x_ref))
    for i in range(nt - 2, -1, -1):
        h = t_nodes[i + 1] - t_nodes[i]
        m_ref[i] = m_ref[i + 1] - 0.5 * h * (dMdt[i] + dMdt[i + 1])

    M = np.empty((nt, x_nodes.size))
    Mx = np.empty_like(M)
    R = np.empty_like(M)
    Rx = np.empty_like(M)
    log_targets = np.log(x_nodes)
    for i in range(nt):
        xs = H.H[i]
        if xs[0] > x_nodes[0] or xs[-1] < x_nodes[-1]:
            raise InversionFailure("tabulation grid exceeds slice image; widen the z range")
        logx = np.log(xs)
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (mx_param[i, 1:] + mx_param[i, :-1]) * np.diff(xs))))
        cum_ref = np.interp(np.log(x_ref), logx, cum)
        m_slice = m_ref[i] + cum - cum_ref
        M[i] = PchipInterpolator(logx, m_slice)(log_targets)
        Mx[i] = np.exp(PchipInterpolator(logx, np.log(mx_param[i]))(log_targets))
        R[i] = PchipInterpolator(logx, H.H_z[i])(log_targets)
        Rx[i] = PchipInterpolator(logx, H.H_zz[i] / H.H_z[i])(log_targets)

    return MertonSolution(
        sharpe=lam,
        horizon=T,
        t_nodes=t_nodes,
        x_nodes=x_nodes,
        M=M,
        M_x=Mx,
        R=R,
        R_x=Rx,
        utility=utility,
        meta={"route": "heat"},
    )


def solve_merton(
    utility: Utility,
    sharpe: float,
    horizon: float,
    grid: HeatGridSpec = HeatGridSpec(),
    x_nodes: Array | None = None,
) -> MertonSolution:
    """Heat route end to end: solve_heat then build_merton."""
    return build_merton(solve_heat(utility, sharpe, horizon, grid), utility, x_nodes)


_CACHE_VERSION = "v1"


def solve_merton_cached(
    utility: Utility,
    sharpe: float,
    horizon: float,
    grid: HeatGridSpec = HeatGridSpec(),
    x_nodes: Array | None = None,
    cache_dir: str | None = None,
) -> MertonSolution:
    """solve_merton with a binary on-disk cache.

    The key hashes the utility's repr (dataclass reprs carry all parameters),
    the Sharpe ratio, horizon, grid spec, and wealth grid; a version directory
    isolates incompatible format changes.
    """
    import hashlib
    import os

    if cache_dir is None:
        return solve_merton(utility, sharpe, horizon, grid, x_nodes)
    xb = b"" if x_nodes is None else np.asarray(x_nodes, dtype=float).tobytes()
    raw = repr((repr(utility), sharpe, horizon, grid)).encode() + xb
    key = hashlib.sha256(raw).hexdigest()[:24]
    path = os.path.join(cache_dir, _CACHE_VERSION, f"merton-{key}.npz")
    if os.path.exists(path):
        with np.load(path) as data:
            return MertonSolution(
                sharpe=float(data["sharpe"]),
                horizon=float(data["horizon"]),
                t_nodes=data["t_nodes"],
                x_nodes=data["x_nodes"],
                M=data["M"],
                M_x=data["M_x"],
                R=data["R"],
                R_x=data["R_x"],
                utility=utility,
                meta={"route": "heat", "cache": "hit"},
            )
    sol = solve_merton(utility, sharpe, horizon, grid, x_nodes)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    np.savez_compressed(
        path,
        sharpe=sol.sharpe,
        horizon=sol.horizon,
        t_nodes=sol.t_nodes,
        x_nodes=sol.x_nodes,
        M=sol.M,
        M_x=sol.M_x,
        R=sol.R,
        R_x=sol.R_x,
    )
    return sol


def _log_grid_derivatives(f: Array, log_x: Array, x: Array):
    """First and second wealth derivatives of a slice tabulated on log-spaced x."""
    fu = np.gradient(f, log_x)
    fuu = np.gradient(fu, log_x)
    fx = fu / x
    fxx = (fuu - fu) / x**2
    return fx, fxx


def apply_Dk(sol: MertonSolution, k: int, f: Array) -> Array:
    """Operator D_k = R^k d^k/dx^k applied to a surface f over (t, x).

    The k-th derivative is built by repeated first differences on the
    log-wealth grid (second-order, one-sided at the edges).  Compositions
    such as D_1^2 are repeated calls with k=1.
    """
    if not 1 <= k <= 4:
        raise ValueError("k must be in 1..4")
    f = np.asarray(f, dtype=float)
    if f.shape != sol.M.shape:
        raise ValueError("surface shape mismatch")
    if sol.x_nodes.size < k + 4:
        raise StencilOverflow("too few wealth nodes for the requested derivative order")
    log_x = sol.log_x
    x = sol.x_nodes
    d = f
    for _ in range(k):
        d = np.gradient(d, log_x, axis=1) / x[None, :]
    return sol.R**k * d


def solve_hjb_direct(
    utility: Utility,
    sharpe: float,
    horizon: float,
    n_x: int = 451,
    n_t: int = 400,
    x_min: float = 1e-3,
    x_max: float = 2e3,
) -> MertonSolution:
    """Direct finite-difference march of the nonlinear Merton HJB (oracle).

    The pointwise sup is evaluated in closed form, giving
    M_t = lambda^2/2 * M_x^2 / M_xx.  Each backward step freezes the risk
    tolerance R = -M_x/M_xx from the current slice and takes one implicit
    step of the equivalent linear PDE M_t + lambda^2/2 R^2 M_xx
    + lambda^2 R M_x = 0.  Dirichlet M = U(x_min) at the lower edge and a
    vanishing second derivative at the upper edge; accuracy is oracle-grade
    only (first order in time).
    """
    x = np.geomspace(x_min, x_max, n_x)
    log_x = np.log(x)
    h = log_x[1] - log_x[0]
    t_nodes = np.linspace(0.0, horizon, n_t + 1)
    dt = horizon / n_t

    M = np.empty((n_t + 1, n_x))
    M[-1] = np.asarray(utility.u(x), dtype=float)
    cur = M[-1].copy()

    for k in range(n_t - 1, -1, -1):
        fx, fxx = _log_grid_derivatives(cur, log_x, x)
        interior = slice(1, -1)
        if np.any(fxx[interior] >= 0.0):
            raise ConvexityLoss("M_xx >= 0 detected; direct march aborted")
        R = -fx / np.where(fxx < 0, fxx, -1e-300)
        # linear operator in u = log x: coefficients of f_uu and f_u
        r_over_x = R / x
        c_uu = 0.5 * sharpe**2 * r_over_x**2
        c_u = sharpe**2 * r_over_x - c_uu
        lower = -dt * (c_uu / h**2 - c_u / (2 * h))
        diag = 1.0 + dt * 2.0 * c_uu / h**2
        upper = -dt * (c_uu / h**2 + c_u / (2 * h))
        # boundaries: Dirichlet at x_min, f_uu - f_u extrapolated (M_xx = 0) at x_max
        nloc = n_x
        lo = lower.copy()
        di = diag.copy()
        up = upper.copy()
        rhs = cur.copy()
        di[0], up[0], rhs[0] = 1.0, 0.0, float(utility.u(x_min))
        # at top node M_xx = 0, leaving pure advection with a one-sided derivative
        cu_top = sharpe**2 * r_over_x[-1]
        di[-1] = 1.0 - dt * cu_top / h
        lo[-1] = dt * cu_top / h
        up[-1] = 0.0
        cur = _thomas(lo, di, up, rhs)
        M[k] = cur

    Mx = np.empty_like(M)
    R = np.empty_like(M)
    Rx = np.empty_like(M)
    for i in range(n_t + 1):
        fx, fxx = _log_grid_derivatives(M[i], log_x, x)
        Mx[i] = fx
        with np.errstate(divide="ignore", invalid="ignore"):
            R[i] = np.where(fxx < 0, -fx / fxx, np.nan)
        bad = ~np.isfinite(R[i])
        R[i, bad] = x[bad]  # far-field fallback, oracle only
        Rx[i] = np.gradient(R[i], log_x) / x
    return MertonSolution(
        sharpe=sharpe,
        horizon=horizon,
        t_nodes=t_nodes,
        x_nodes=x,
        M=M,
        M_x=Mx,
        R=R,
        R_x=Rx,
        utility=utility,
        meta={"route": "direct_hjb"},
    )


def closed_form_power(
    gamma: float,
    sharpe: float,
    horizon: float,
    t_nodes: Array | None = None,
    x_nodes: Array | None = None,
) -> MertonSolution:
    """Classical Merton solution M = (x^gamma/gamma) exp(lambda^2 gamma tau / (2(1-gamma)))."""
    utility = PowerUtility(gamma)
    if t_nodes is None:
        t_nodes = np.linspace(0.0, horizon, 101)
    if x_nodes is None:
        x_nodes = default_x_grid()
    t_nodes = np.asarray(t_nodes, dtype=float)
    x_nodes = np.asarray(x_nodes, dtype=float)
    tau = (horizon - t_nodes)[:, None]
    growth = np.exp(0.5 * sharpe**2 * gamma / (1.0 - gamma) * tau)
    M = (x_nodes[None, :] ** gamma / gamma) * growth
    Mx = x_nodes[None, :] ** (gamma - 1.0) * growth
    R = np.broadcast_to(x_nodes / (1.0 - gamma), M.shape).copy()
    Rx = np.full_like(M, 1.0 / (1.0 - gamma))
    return MertonSolution(
        sharpe=sharpe,
        horizon=horizon,
        t_nodes=t_nodes,
        x_nodes=x_nodes,
        M=M,
        M_x=Mx,
        R=R,
        R_x=Rx,
        utility=utility,
        meta={"route": "closed_form"},
    )
