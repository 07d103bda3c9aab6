"""Adjoint-operator machinery: K*, phi, covariance and the variance curve.

Every integral here has an algebraic endpoint singularity of known exponent,
so the integrands are written in gap form (distance to the singular
endpoint) and fed to the quadrature engine of :mod:`volterra_bsde.quadrature`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from . import kernels
from .errors import CurveConsistencyError, DomainError, MonotonicityError
from .quadrature import (
    DEFAULT_RULE,
    SingularQuadRule,
    integrate_gap,
    integrate_gap_batch,
    integrate_smooth,
)

# The phi double integral is a cross-check against the L2-norm route at
# 1e-4 relative tolerance; a cheaper rule keeps its triple nesting fast.
DOUBLE_ROUTE_RULE = SingularQuadRule(
    n_nodes=8, n_panels=4, max_refinements=4, abs_tol=1e-7, rel_tol=1e-5
)


@dataclass(frozen=True)
class Volatility:
    """Bounded, strictly positive deterministic volatility t -> sigma_t."""

    sigma_fn: Callable
    bounds: tuple
    label: str = "sigma"

    def __post_init__(self):
        c0, C0 = self.bounds
        if not (0.0 < c0 <= C0):
            raise DomainError(f"volatility bounds must satisfy 0 < c0 <= C0, got {self.bounds}")

    def __call__(self, t):
        return np.asarray(self.sigma_fn(np.asarray(t, dtype=float)), dtype=float)

    @staticmethod
    def constant(value):
        if value <= 0:
            raise DomainError(f"constant volatility must be positive, got {value}")
        return Volatility(lambda t: np.full_like(np.asarray(t, dtype=float), value),
                          (value, value), label=f"const({value:g})")

    @staticmethod
    def from_table(times, values):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise DomainError("volatility table needs at least two increasing times")
        if np.any(values <= 0):
            raise DomainError("volatility table values must be positive")
        return Volatility(lambda t: np.interp(np.asarray(t, dtype=float), times, values),
                          (float(values.min()), float(values.max())),
                          label=f"table(n={times.size})")


# -- the adjoint operator K* -------------------------------------------------


def kstar_apply(kernel, sigma, t, u, rule=DEFAULT_RULE):
    """(K*_t sigma)_u = int_u^t sigma_s dK/ds(s, u) ds for 0 <= u < t <= T."""
    if not (0.0 <= u < t <= kernel.T):
        raise DomainError(f"kstar needs 0 <= u < t <= T, got u={u}, t={t}")
    return float(kstar_apply_batch(kernel, sigma, t, np.asarray([u]), rule=rule)[0])


def kstar_apply_batch(kernel, sigma, t, u, rule=DEFAULT_RULE):
    """Vectorized (K*_t sigma)_u over an array of lower arguments u < t."""
    u = np.asarray(u, dtype=float)
    if kernel.family == kernels.FBM and np.any(u <= 0):
        raise DomainError("fbm adjoint diverges at u = 0")
    ucol = u[:, None]

    def integrand(gap):
        return sigma(ucol + gap) * kernels.dt_gap_t(kernel, ucol, gap)

    alpha = kernel.min_diag_alpha(float(np.min(u)), t)
    return integrate_gap_batch(integrand, t - u, alpha=alpha, rule=rule)


# -- phi and phi-tilde -------------------------------------------------------


def _phi_pairs(kernel, r, s, rule, absolute=False):
    """phi(r, s) (or its absolute-value variant) for flat pair arrays."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    m = np.minimum(r, s)
    M = np.maximum(r, s)
    wrap = np.abs if absolute else (lambda x: x)

    mcol = m[:, None]
    Mcol = M[:, None]

    # tau in (0, m/2]: both derivative factors evaluated away from their
    # diagonals; for fbm each factor blows up like tau**(1/2 - H) at tau = 0.
    def left(tau):
        a = wrap(kernels.dt_gap_t(kernel, tau, Mcol - tau))
        b = wrap(kernels.dt_gap_t(kernel, tau, mcol - tau))
        return a * b

    # gap d = m - tau in (0, m/2]: the min-side factor carries the diagonal
    # singularity d**(H - 3/2); the max-side factor stays smooth.
    def right(d):
        a = wrap(kernels.dt_gap_t(kernel, mcol - d, Mcol - mcol + d))
        b = wrap(kernels.dt_gap_s(kernel, mcol, d))
        return a * b

    alpha_left = 1.0 + 2.0 * kernel.second_arg_power()
    alpha_right = kernel.min_diag_alpha(float(np.min(m)), float(np.max(m)))
    out = integrate_gap_batch(left, m / 2.0, alpha=alpha_left, rule=rule)
    out += integrate_gap_batch(right, m / 2.0, alpha=alpha_right, rule=rule)
    return out


def _check_phi_args(kernel, r, s):
    if not (0.0 < r <= kernel.T and 0.0 < s <= kernel.T):
        raise DomainError(f"phi needs 0 < r, s <= T, got r={r}, s={s}")
    if r == s:
        raise DomainError("phi is undefined on the diagonal r = s")


def phi_eval(kernel, r, s, rule=DEFAULT_RULE):
    """phi(r, s) = int_0^min(r,s) dK/dr(r, t) dK/ds(s, t) dt, r != s."""
    _check_phi_args(kernel, r, s)
    return float(_phi_pairs(kernel, np.asarray([r]), np.asarray([s]), rule)[0])


def phi_tilde_eval(kernel, r, s, rule=DEFAULT_RULE):
    """phi with absolute values of both derivative factors (diagnostic)."""
    _check_phi_args(kernel, r, s)
    return float(
        _phi_pairs(kernel, np.asarray([r]), np.asarray([s]), rule, absolute=True)[0]
    )


# -- covariance --------------------------------------------------------------


def covariance_R(kernel, t, s, rule=DEFAULT_RULE):
    """R(t, s) = int_0^min(t,s) K(t, u) K(s, u) du."""
    if not (0.0 <= t <= kernel.T and 0.0 <= s <= kernel.T):
        raise DomainError(f"covariance needs (t, s) in [0, T]^2, got ({t}, {s})")
    m, M = (t, s) if t <= s else (s, t)
    if m == 0.0:
        return 0.0

    def left(u):
        return kernels.kernel_eval_batch(kernel, M, u, rule=rule) * \
            kernels.kernel_eval_batch(kernel, m, u, rule=rule)

    def right(d):
        return kernels.kernel_eval_batch(kernel, M, m - d, rule=rule) * \
            kernels.kernel_eval_batch(kernel, m, m - d, rule=rule)

    alpha_left = 1.0 + 2.0 * kernel.second_arg_power()
    h_m = float(kernel.hurst_at(m))
    alpha_right = 2.0 * h_m if M == m else h_m + 0.5
    val = integrate_gap(left, m / 2.0, alpha=alpha_left, rule=rule)
    val += integrate_gap(right, m / 2.0, alpha=alpha_right, rule=rule)
    return float(val)


# -- variance curve ----------------------------------------------------------


@dataclass
class VarianceCurve:
    """Var(N_t) and its rate on a grid, with spline interpolants.

    Construction validates the defining invariants: var starts at zero and
    never decreases, the rate is positive on the open interval, and the
    spline-integrated rate reproduces var to 1e-6 relative.  Var is
    interpolated monotonically (PCHIP); the rate uses a C2 cubic spline,
    whose knot derivatives are accurate enough for the reconstruction
    invariant (PCHIP's are only O(h^2)).
    """

    grid: np.ndarray
    var: np.ndarray
    rate: np.ndarray
    _var_ip: PchipInterpolator = field(init=False, repr=False)
    _rate_ip: CubicSpline = field(init=False, repr=False)

    RECON_TOL = 1e-6

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.var = np.asarray(self.var, dtype=float)
        self.rate = np.asarray(self.rate, dtype=float)
        scale = max(float(self.var[-1]), 1e-300)
        if self.var[0] != 0.0:
            raise DomainError("variance curve must start at Var(N_0) = 0")
        drops = np.diff(self.var)
        if np.any(drops < -1e-9 * max(scale, 1.0)):
            k = int(np.argmin(drops))
            raise MonotonicityError(
                f"variance decreases at t={self.grid[k + 1]:.6g} by {-drops[k]:.3e}"
            )
        if np.any(self.rate[1:-1] <= 0.0):
            k = 1 + int(np.argmin(self.rate[1:-1]))
            raise MonotonicityError(
                f"variance rate is non-positive at t={self.grid[k]:.6g}"
            )
        self._var_ip = PchipInterpolator(self.grid, self.var)
        self._rate_ip = CubicSpline(self.grid, self.rate)
        recon = self._rate_ip.antiderivative()(self.grid)
        worst = float(np.max(np.abs(recon - recon[0] + self.var[0] - self.var)))
        if worst > self.RECON_TOL * scale:
            raise CurveConsistencyError(
                f"integrated rate misses var by {worst:.3e} "
                f"(> {self.RECON_TOL:g} * Var(T)); use a graded grid near t=0"
            )

    @property
    def T(self):
        return float(self.grid[-1])

    def reconstruction_error(self):
        """max_i |int_0^{t_i} rate - var_i|, the enforced consistency gap."""
        recon = self._rate_ip.antiderivative()(self.grid)
        return float(np.max(np.abs(recon - recon[0] - self.var)))

    def var_at(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.grid[0] - 1e-12) or np.any(t > self.grid[-1] + 1e-12):
            raise DomainError("variance queried outside the curve's grid span")
        return self._var_ip(np.clip(t, self.grid[0], self.grid[-1]))

    def rate_at(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.grid[0] - 1e-12) or np.any(t > self.grid[-1] + 1e-12):
            raise DomainError("rate queried outside the curve's grid span")
        return self._rate_ip(np.clip(t, self.grid[0], self.grid[-1]))

    def to_csv_text(self):
        lines = ["t,var,rate"]
        for t, v, q in zip(self.grid, self.var, self.rate):
            lines.append(f"{t:.17g},{v:.17g},{q:.17g}")
        return "\n".join(lines) + "\n"


def graded_grid(T, n, power=2.0, t0=0.0):
    """Grid on [t0, T] clustered toward t0; power=1 gives uniform spacing."""
    tau = np.linspace(0.0, 1.0, n + 1)
    return t0 + (T - t0) * tau**power


def variance_l2_value(kernel, sigma, t, rule=DEFAULT_RULE):
    """Var(N_t) as the squared L2 norm of u -> (K*_t sigma)_u."""
    if t == 0.0:
        return 0.0

    def left(u):
        shape = u.shape
        w = kstar_apply_batch(kernel, sigma, t, u.reshape(-1), rule=rule)
        return w.reshape(shape) ** 2

    def right(d):
        shape = d.shape
        w = kstar_apply_batch(kernel, sigma, t, (t - d).reshape(-1), rule=rule)
        return w.reshape(shape) ** 2

    alpha_left = 1.0 + 2.0 * kernel.second_arg_power()
    alpha_right = 2.0 * float(kernel.hurst_at(t)) if kernel.family != kernels.SIGN_TEST else 1.0
    val = integrate_gap(left, t / 2.0, alpha=alpha_left, rule=rule)
    val += integrate_gap(right, t / 2.0, alpha=alpha_right, rule=rule)
    return float(val)


def variance_double_route(kernel, sigma, t, rule=DOUBLE_ROUTE_RULE):
    """Var(N_t) as the phi double integral (independent cross-check route)."""
    if t == 0.0:
        return 0.0

    def g_batch(rvals):
        """Inner integral int_0^r phi(r, u) sigma_u du for an array of r."""
        rcol = rvals[:, None]

        def inner_left(u):
            flat_r = np.broadcast_to(rcol, u.shape).reshape(-1)
            vals = _phi_pairs(kernel, flat_r, u.reshape(-1), rule)
            return vals.reshape(u.shape) * sigma(u)

        def inner_right(d):
            flat_r = np.broadcast_to(rcol, d.shape).reshape(-1)
            vals = _phi_pairs(kernel, flat_r, (rcol - d).reshape(-1), rule)
            return vals.reshape(d.shape) * sigma(rcol - d)

        alpha_diag = 2.0 * kernel.min_diag_alpha(0.0, float(np.max(rvals)))
        out = integrate_gap_batch(inner_left, rvals / 2.0, alpha=1.0, rule=rule)
        out += integrate_gap_batch(inner_right, rvals / 2.0, alpha=alpha_diag, rule=rule)
        return out

    def outer(r):
        shape = r.shape
        g = g_batch(r.reshape(-1))
        return 2.0 * sigma(r) * g.reshape(shape)

    return float(integrate_smooth(outer, 0.0, t, rule=rule))


def variance_curve(kernel, sigma, grid, rule=DEFAULT_RULE):
    """Tabulate Var(N_t) on ``grid`` and differentiate with a monotone spline.

    The variance values come from the L2-norm route; the rate is the
    derivative of a PCHIP fit, which keeps it positive and lets the curve
    reproduce itself when the rate is re-integrated.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3 or np.any(np.diff(grid) <= 0):
        raise DomainError("variance grid must be increasing with >= 3 points")
    if grid[0] != 0.0 or grid[-1] > kernel.T + 1e-12:
        raise DomainError("variance grid must start at 0 and stay within [0, T]")
    sig_samples = sigma(grid[1:])
    c0, C0 = sigma.bounds
    if np.any(sig_samples < c0 - 1e-12) or np.any(sig_samples > C0 + 1e-12):
        raise DomainError("volatility leaves its declared bounds on the grid")
    var = np.zeros_like(grid)
    for i, t in enumerate(grid[1:], start=1):
        var[i] = variance_l2_value(kernel, sigma, float(t), rule=rule)
    rate = CubicSpline(grid, var, bc_type="not-a-knot").derivative()(grid)
    # the closed left endpoint may sit exactly at rate zero (e.g. fBm)
    if rate[0] < 0.0 and rate[0] > -1e-3 * float(np.max(rate)):
        rate[0] = 0.0
    return VarianceCurve(grid=grid, var=var, rate=rate)


# -- transfer identity -------------------------------------------------------


@dataclass(frozen=True)
class TransferIdentityReport:
    """Pointwise comparison of (K*_T 1_[0,r])_t against K(r, t)."""

    r: float
    grid: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    max_abs_deviation: float


def transfer_identity_check(kernel, r, grid, rule=DEFAULT_RULE):
    """Verify (K*_T 1_[0,r])_t = K(r, t) on the grid.

    For t >= r both sides vanish by the Volterra property; below r the left
    side is evaluated by singular quadrature of the adjoint formula and the
    right side by kernel evaluation.
    """
    if not (0.0 < r <= kernel.T):
        raise DomainError(f"transfer check needs 0 < r <= T, got r={r}")
    grid = np.asarray(grid, dtype=float)
    lhs = np.zeros_like(grid)
    rhs = np.zeros_like(grid)
    ones = Volatility.constant(1.0)
    below = grid < r
    if kernel.family == kernels.FBM:
        below &= grid > 0
    if np.any(below):
        lhs[below] = kstar_apply_batch(kernel, ones, r, grid[below], rule=rule)
        rhs[below] = kernels.kernel_eval_batch(kernel, r, grid[below], rule=rule)
    dev = float(np.max(np.abs(lhs - rhs))) if grid.size else 0.0
    return TransferIdentityReport(
        r=float(r), grid=grid, lhs=lhs, rhs=rhs, max_abs_deviation=dev
    )
