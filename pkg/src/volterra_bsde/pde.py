"""Terminal-value semilinear PDE solvers on the variance clock.

The equation is  u_t = -1/2 Var'(t) u_xx - f(t, x, u, -sigma_t u_x)  with
u(T, x) = g(x).  Two routes are implemented as mutual oracles:

* ``solve_semilinear_picard`` iterates the mild (heat-semigroup) form.  Its
  workhorse, :func:`heat_convolve`, convolves a piecewise-linear grid
  function with a Gaussian *exactly* (Bachelier-style closed form per
  kink), so affine profiles propagate without any discretization error.
* ``solve_semilinear_fd`` is a backward theta-scheme with the nonlinearity
  lagged one time level and far-field Dirichlet data taken from the linear
  solution plus a source-ODE correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr

from .errors import (
    ConvergenceError,
    DomainError,
    GrowthViolationError,
    InstabilityError,
    PreconditionError,
)
from .reporting import fmt

_SQRT2PI = np.sqrt(2.0 * np.pi)


# -- problem data -------------------------------------------------------------


@dataclass(frozen=True)
class GrowthBudget:
    """|g(x)| <= c exp(lambda x^2) with lambda below the heat-flow budget."""

    c: float
    lam: float

    def __post_init__(self):
        if self.c <= 0 or self.lam < 0:
            raise DomainError(f"growth budget needs c > 0, lambda >= 0, got {self}")

    def check_against(self, varcurve):
        bound = 0.25 / float(varcurve.var[-1])
        if self.lam >= bound:
            raise GrowthViolationError(
                f"lambda = {self.lam:g} >= (4 sup Var)^-1 = {bound:g}"
            )


@dataclass(frozen=True)
class TerminalCondition:
    g_fn: Callable
    growth: GrowthBudget
    label: str = "g"

    def __call__(self, x):
        return np.asarray(self.g_fn(np.asarray(x, dtype=float)), dtype=float)

    def validate_growth(self, xs):
        vals = np.abs(self(xs))
        budget = self.growth.c * np.exp(self.growth.lam * np.asarray(xs) ** 2)
        if np.any(vals > budget):
            k = int(np.argmax(vals - budget))
            raise GrowthViolationError(
                f"|g({xs[k]:.4g})| = {vals[k]:.4g} exceeds its growth budget"
            )


@dataclass(frozen=True)
class Driver:
    """BSDE generator f(t, x, y, z), Lipschitz in (y, z) on working boxes."""

    f_fn: Callable
    lipschitz_yz: float
    growth_degree: int = 4
    label: str = "f"

    def __call__(self, t, x, y, z):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        return np.asarray(self.f_fn(t, x, y, z), dtype=float)

    def lipschitz_estimate(self, t_range, x_range, y_range, z_range, n=5):
        """Sampled two-sided difference quotients in y and z."""
        ts = np.linspace(*t_range, n)
        xs = np.linspace(*x_range, n)
        ys = np.linspace(*y_range, n)
        zs = np.linspace(*z_range, n)
        T, X, Y, Z = np.meshgrid(ts, xs, ys, zs, indexing="ij")
        hy = max(1e-6, 1e-6 * (abs(y_range[0]) + abs(y_range[1])))
        hz = max(1e-6, 1e-6 * (abs(z_range[0]) + abs(z_range[1])))
        dy = (self(T, X, Y + hy, Z) - self(T, X, Y - hy, Z)) / (2 * hy)
        dz = (self(T, X, Y, Z + hz) - self(T, X, Y, Z - hz)) / (2 * hz)
        return float(max(np.max(np.abs(dy)), np.max(np.abs(dz))))

    def check_lipschitz(self, t_range, x_range, y_range, z_range):
        est = self.lipschitz_estimate(t_range, x_range, y_range, z_range)
        if est > self.lipschitz_yz * (1.0 + 1e-6) + 1e-12:
            raise PreconditionError(
                f"driver Lipschitz estimate {est:.4g} exceeds budget "
                f"{self.lipschitz_yz:g} on the working box"
            )
        return est


ZERO_DRIVER = Driver(f_fn=lambda t, x, y, z: np.zeros(np.broadcast(t, x, y, z).shape),
                     lipschitz_yz=0.0, label="0")


@dataclass
class PdeSolution:
    """u and u_x on the (t, x) grid, with solver provenance."""

    tgrid: np.ndarray
    xgrid: np.ndarray
    u: np.ndarray
    ux: np.ndarray
    method: str
    iterations: int
    residual: float
    change_history: list = field(default_factory=list)

    def to_csv_text(self):
        lines = [
            f"# method={self.method}",
            f"# nt={self.tgrid.size} nx={self.xgrid.size}",
            f"# iterations={self.iterations} residual={fmt(self.residual)}",
            "t,x,u,ux",
        ]
        for i, t in enumerate(self.tgrid):
            for j, x in enumerate(self.xgrid):
                lines.append(f"{fmt(t)},{fmt(x)},{fmt(self.u[i, j])},{fmt(self.ux[i, j])}")
        return "\n".join(lines) + "\n"


# -- heat convolution ---------------------------------------------------------


def _uniform_spacing(xgrid):
    dx = np.diff(xgrid)
    if dx.size == 0 or np.any(dx <= 0):
        raise DomainError("x grid must be strictly increasing")
    if np.max(dx) - np.min(dx) > 1e-9 * np.max(dx):
        raise DomainError("heat convolution requires a uniform x grid")
    return float(np.mean(dx))


def heat_convolve(h, v, xgrid):
    """Exact Gaussian convolution of the piecewise-linear extension of h.

    h is read as the piecewise-linear interpolant through (xgrid, h),
    extended beyond the grid with its boundary segment slopes.  Writing the
    interpolant as an affine part plus kinks c_j (x - x_j)_+, each kink
    convolves in closed form:  E[(x + sqrt(v) Z - x_j)_+] =
    xi Phi(xi / sqrt(v)) + sqrt(v) phi(xi / sqrt(v)).  The result is exact
    for every v >= 0, including v far below the grid spacing.
    """
    h = np.asarray(h, dtype=float)
    xgrid = np.asarray(xgrid, dtype=float)
    if v < 0:
        raise DomainError(f"variance increment must be nonnegative, got {v}")
    if v == 0.0:
        return h.copy()
    dx = _uniform_spacing(xgrid)
    m = xgrid.size
    slopes = np.diff(h) / dx
    kinks = np.diff(slopes)  # c_j at interior knots j = 1 .. m-2
    affine = h[0] + slopes[0] * (xgrid - xgrid[0])
    if m < 3 or not np.any(kinks):
        return affine
    rel = np.arange(-(m - 2), m - 1, dtype=float) * dx
    sq = np.sqrt(v)
    zed = rel / sq
    bach = rel * ndtr(zed) + sq * np.exp(-0.5 * zed * zed) / _SQRT2PI
    return affine + np.convolve(kinks, bach)[m - 3 : 2 * m - 3]


def gradient_x(sol_or_u, xgrid=None):
    """Spatial gradient: central differences inside, 2nd-order one-sided edges."""
    if isinstance(sol_or_u, PdeSolution):
        return np.gradient(sol_or_u.u, sol_or_u.xgrid, axis=-1, edge_order=2)
    return np.gradient(np.asarray(sol_or_u, dtype=float), xgrid, axis=-1, edge_order=2)


# -- solvers ------------------------------------------------------------------


def _prepare_grids(varcurve, tgrid, xgrid):
    tgrid = np.asarray(tgrid, dtype=float)
    xgrid = np.asarray(xgrid, dtype=float)
    if tgrid.ndim != 1 or tgrid.size < 2 or np.any(np.diff(tgrid) <= 0):
        raise DomainError("t grid must be strictly increasing with >= 2 points")
    if tgrid[-1] > varcurve.T + 1e-12:
        raise DomainError("t grid extends beyond the variance curve")
    _uniform_spacing(xgrid)
    V = np.asarray(varcurve.var_at(tgrid), dtype=float)
    dV = np.maximum(np.diff(V), 0.0)
    return tgrid, xgrid, V, dV


def solve_linear(g, varcurve, tgrid, xgrid):
    """u(t, x) = P_{Var(T) - Var(t)} g(x): the f == 0 solution."""
    tgrid, xgrid, V, _ = _prepare_grids(varcurve, tgrid, xgrid)
    g.validate_growth(xgrid)
    g.growth.check_against(varcurve)
    g_row = g(xgrid)
    u = np.empty((tgrid.size, xgrid.size))
    u[-1] = g_row
    for i in range(tgrid.size - 1):
        u[i] = heat_convolve(g_row, float(V[-1] - V[i]), xgrid)
    return PdeSolution(
        tgrid=tgrid, xgrid=xgrid, u=u, ux=gradient_x(u, xgrid),
        method="linear", iterations=1, residual=0.0,
    )


def _z_rows(sigma, tgrid, ux):
    if sigma is None:
        return -ux
    return -np.asarray(sigma(tgrid))[:, None] * ux


def _driver_precheck(f, sigma, tgrid, xgrid, lin):
    if f.lipschitz_yz == 0.0:
        return
    u_lo, u_hi = float(np.min(lin.u)), float(np.max(lin.u))
    pad = 1.0 + 0.5 * (u_hi - u_lo)
    z = _z_rows(sigma, tgrid, lin.ux)
    z_lo, z_hi = float(np.min(z)), float(np.max(z))
    f.check_lipschitz(
        (float(tgrid[0]), float(tgrid[-1])),
        (float(xgrid[0]), float(xgrid[-1])),
        (u_lo - pad, u_hi + pad),
        (z_lo - pad, z_hi + pad),
    )


def solve_semilinear_picard(f, g, varcurve, tgrid, xgrid, tol=1e-9, max_iter=60,
                            sigma=None):
    """Fixed-point iteration on the mild form.

    Each sweep rebuilds  u(t_i) = P_{V_T - V_i} g + int_{t_i}^T
    P_{V_s - V_i} f(s, ., u, -sigma u_x) ds,  with the source from the
    previous iterate, the time integral by the trapezoid rule, and the
    semigroup accumulated backward one step at a time.  Stops when the
    sup-norm change drops below ``tol``; raises ConvergenceError with the
    change history otherwise.
    """
    if tol <= 0:
        raise DomainError("picard tolerance must be positive")
    lin = solve_linear(g, varcurve, tgrid, xgrid)
    tgrid, xgrid, V, dV = _prepare_grids(varcurve, tgrid, xgrid)
    _driver_precheck(f, sigma, tgrid, xgrid, lin)
    nt = tgrid.size
    dt = np.diff(tgrid)
    g_row = lin.u[-1]
    u = lin.u.copy()
    ux = lin.ux.copy()
    history = []
    for sweep in range(1, max_iter + 1):
        w = f(tgrid[:, None], xgrid[None, :], u, _z_rows(sigma, tgrid, ux))
        integral = np.zeros_like(u)
        for i in range(nt - 2, -1, -1):
            carried = integral[i + 1] + 0.5 * dt[i] * w[i + 1]
            integral[i] = heat_convolve(carried, float(dV[i]), xgrid) \
                + 0.5 * dt[i] * w[i]
        u_new = lin.u + integral
        u_new[-1] = g_row
        change = float(np.max(np.abs(u_new - u)))
        history.append(change)
        u = u_new
        ux = gradient_x(u, xgrid)
        if change <= tol:
            return PdeSolution(
                tgrid=tgrid, xgrid=xgrid, u=u, ux=ux, method="picard_mild",
                iterations=sweep, residual=change, change_history=history,
            )
    raise ConvergenceError(
        f"picard iteration still changing by {history[-1]:.3e} after "
        f"{max_iter} sweeps", history=history,
    )


def solve_semilinear_fd(f, g, varcurve, tgrid, xgrid, theta=1.0, sigma=None):
    """Backward theta-scheme with the nonlinearity lagged one time level.

    Diffusion uses the exact variance increment of each step, so the linear
    part is integrated exactly in time.  Far-field Dirichlet values come
    from the linear solution plus an explicit source-correction ODE, which
    keeps y-dependent drivers accurate at the boundary.
    """
    if not (0.0 <= theta <= 1.0):
        raise DomainError(f"theta must lie in [0, 1], got {theta}")
    lin = solve_linear(g, varcurve, tgrid, xgrid)
    tgrid, xgrid, V, dV = _prepare_grids(varcurve, tgrid, xgrid)
    _driver_precheck(f, sigma, tgrid, xgrid, lin)
    nt, nx = tgrid.size, xgrid.size
    if nx < 3:
        raise DomainError("theta scheme needs at least 3 space points")
    dx = float(np.mean(np.diff(xgrid)))
    dt = np.diff(tgrid)
    sig_vals = np.ones(nt) if sigma is None else np.asarray(sigma(tgrid), dtype=float)
    z_lin = -sig_vals[:, None] * lin.ux

    u = np.empty((nt, nx))
    u[-1] = lin.u[-1]
    corr = np.zeros(2)  # source ODE correction at the two boundary columns
    amp_limit = 10.0

    for i in range(nt - 2, -1, -1):
        a = 0.5 * float(dV[i]) / dx**2
        prev = u[i + 1]
        z_prev = -sig_vals[i + 1] * np.gradient(prev, xgrid, edge_order=2)
        source = f(tgrid[i + 1], xgrid, prev, z_prev)
        rhs_full = prev.copy()
        if theta < 1.0:
            lap = np.zeros(nx)
            lap[1:-1] = prev[:-2] - 2.0 * prev[1:-1] + prev[2:]
            rhs_full += (1.0 - theta) * a * lap
        rhs_full += dt[i] * source

        for side, col in ((0, 0), (1, nx - 1)):
            fb = f(tgrid[i + 1], xgrid[col], lin.u[i + 1, col] + corr[side],
                   z_lin[i + 1, col])
            corr[side] += dt[i] * float(fb)
        left = lin.u[i, 0] + corr[0]
        right = lin.u[i, -1] + corr[1]

        if theta == 0.0:
            row = rhs_full
            row[0], row[-1] = left, right
        else:
            band = np.zeros((3, nx - 2))
            band[0, 1:] = -theta * a
            band[1, :] = 1.0 + 2.0 * theta * a
            band[2, :-1] = -theta * a
            rhs = rhs_full[1:-1]
            rhs[0] += theta * a * left
            rhs[-1] += theta * a * right
            interior = solve_banded((1, 1), band, rhs)
            row = np.concatenate(([left], interior, [right]))
        amp = np.max(np.abs(row)) / max(np.max(np.abs(prev)), 1e-30)
        if amp > amp_limit:
            raise InstabilityError(
                f"step {i} amplified the sup-norm by {amp:.2f} (> {amp_limit}); "
                "theta likely too explicit for this grid"
            )
        u[i] = row

    return PdeSolution(
        tgrid=tgrid, xgrid=xgrid, u=u, ux=gradient_x(u, xgrid),
        method="theta_fd", iterations=nt - 1, residual=0.0,
    )


# -- interpolation ------------------------------------------------------------


def bilinear_interp(tgrid, xgrid, values, tq, xq):
    """Bilinear interpolation of a (t, x) grid function at query points.

    tq is a vector of times, xq an array of shape (..., len(tq)) of spatial
    queries; spatial queries are clamped to the grid (the caller tracks the
    clip fraction).
    """
    tgrid = np.asarray(tgrid, dtype=float)
    xgrid = np.asarray(xgrid, dtype=float)
    tq = np.atleast_1d(np.asarray(tq, dtype=float))
    xq = np.asarray(xq, dtype=float)
    it = np.clip(np.searchsorted(tgrid, tq, side="right") - 1, 0, tgrid.size - 2)
    wt = (tq - tgrid[it]) / (tgrid[it + 1] - tgrid[it])
    wt = np.clip(wt, 0.0, 1.0)
    xc = np.clip(xq, xgrid[0], xgrid[-1])
    ix = np.clip(np.searchsorted(xgrid, xc, side="right") - 1, 0, xgrid.size - 2)
    wx = (xc - xgrid[ix]) / (xgrid[ix + 1] - xgrid[ix])
    lo = values[it, ix] * (1.0 - wx) + values[it, ix + 1] * wx
    hi = values[it + 1, ix] * (1.0 - wx) + values[it + 1, ix + 1] * wx
    return lo * (1.0 - wt) + hi * wt


def default_halfwidth(varcurve, g_radius=2.0, n_sigmas=8.0):
    """Spatial truncation: n_sigmas Gaussian widths plus the payoff radius."""
    return float(n_sigmas * np.sqrt(varcurve.var[-1]) + g_radius)
