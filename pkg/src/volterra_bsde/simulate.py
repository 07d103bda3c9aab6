"""Monte Carlo paths of (W, X, N) and expectation-form verification checks.

Wiener integrals are discretized with left-point increments and midpoint
kernel evaluation: the kernel weight tables hold K(t_i, s_j*) and
(K*_{t_i} sigma)_{s_j*} at panel midpoints s_j*, which keeps the zero
diagonal of K out of the sums and roughly halves the discretization bias.

Randomness comes from counter-based Philox streams keyed by
(seed, path index), so ensembles are bit-reproducible under any scheduling
of the path loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import kernels
from .errors import DomainError, GrowthViolationError, ResourceBudgetError
from .quadrature import (
    DEFAULT_RULE,
    gauss_hermite_expectation,
    integrate_gap_batch,
    _gauss01,
)
from .reporting import Report, fmt

MEMORY_BUDGET_ENTRIES = 2**26


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing simulation times t_0 < ... < t_n = T."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size < 3:
            raise DomainError("time grid needs at least 3 points (n_steps >= 2)")
        if np.any(np.diff(pts) <= 0) or pts[0] < 0:
            raise DomainError("time grid must be strictly increasing and nonnegative")

    @staticmethod
    def uniform(t0, T, n_steps):
        return TimeGrid(np.linspace(t0, T, n_steps + 1))

    @property
    def t0(self):
        return float(self.points[0])

    @property
    def T(self):
        return float(self.points[-1])

    @property
    def n_steps(self):
        return self.points.size - 1

    @property
    def dt(self):
        return np.diff(self.points)

    @property
    def midpoints(self):
        return 0.5 * (self.points[:-1] + self.points[1:])


@dataclass
class PathEnsemble:
    """Simulated dW increments and the induced X, N paths on one grid."""

    grid: TimeGrid
    n_paths: int
    dW: np.ndarray  # (n_paths, n_steps)
    X: np.ndarray   # (n_paths, n_steps + 1)
    N: np.ndarray   # (n_paths, n_steps + 1)
    seed: int
    kernel_id: str
    sigma_id: str

    def to_csv_text(self, max_paths=None):
        lines = ["path_id,t,X,N"]
        limit = self.n_paths if max_paths is None else min(self.n_paths, max_paths)
        for p in range(limit):
            for i, t in enumerate(self.grid.points):
                lines.append(
                    f"{p},{fmt(t)},{fmt(self.X[p, i])},{fmt(self.N[p, i])}"
                )
        return "\n".join(lines) + "\n"


def _normal_increments(seed, n_paths, dt):
    """Philox streams keyed by (seed, path index); variance dt per column."""
    n_steps = dt.size
    out = np.empty((n_paths, n_steps))
    sqrt_dt = np.sqrt(dt)
    for p in range(n_paths):
        gen = np.random.Generator(
            np.random.Philox(key=np.array([seed, p], dtype=np.uint64))
        )
        out[p] = gen.standard_normal(n_steps)
    out *= sqrt_dt[None, :]
    return out


def kstar_midpoint_table(kernel, sigma, grid, rule=DEFAULT_RULE):
    """Lower-triangular table L[i, j] = (K*_{t_i} sigma)_{s_j*}, j < i.

    Column j accumulates one singular head integral over [s_j*, t_{j+1}]
    plus smooth Gauss panels over the later steps, sharing all kernel
    evaluations across the grid in two vectorized sweeps.
    """
    pts = grid.points
    mids = grid.midpoints
    n = grid.n_steps
    table = np.zeros((n + 1, n))

    # singular head: gap integral from the midpoint to the step's right edge
    mcol = mids[:, None]

    def head_integrand(gap):
        return sigma(mcol + gap) * kernels.dt_gap_t(kernel, mcol, gap)

    alpha = kernel.min_diag_alpha(float(mids[0]), float(pts[-1]))
    head = integrate_gap_batch(head_integrand, pts[1:] - mids, alpha=alpha, rule=rule)

    # smooth tails: 16-point Gauss on every later step for every column
    x01, w01 = _gauss01(16)
    jj, kk = np.triu_indices(n, k=1)  # segment k of column j, k > j
    if jj.size:
        lo = pts[kk][:, None]
        width = (pts[kk + 1] - pts[kk])[:, None]
        nodes = lo + width * x01[None, :]
        gaps = nodes - mids[jj][:, None]
        vals = sigma(nodes) * kernels.dt_gap_t(kernel, mids[jj][:, None], gaps)
        seg = np.sum(vals * (width * w01[None, :]), axis=1)
        segments = np.zeros((n, n))
        segments[jj, kk] = seg
        cums = np.cumsum(segments, axis=1)
    else:
        cums = np.zeros((n, n))

    for j in range(n):
        table[j + 1, j] = head[j]
        if j + 1 < n:
            table[j + 2:, j] = head[j] + cums[j, j + 1:]
    return table


def sample_paths(kernel, sigma, grid, n_paths, seed, rule=DEFAULT_RULE,
                 memory_budget=MEMORY_BUDGET_ENTRIES):
    """Simulate W increments and build X, N via the midpoint kernel tables."""
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    if n_paths * (grid.n_steps + 1) > memory_budget:
        raise ResourceBudgetError(
            f"{n_paths} paths x {grid.n_steps} steps exceeds the memory budget "
            f"of {memory_budget} entries"
        )
    if grid.T > kernel.T + 1e-12:
        raise DomainError("time grid exceeds the kernel horizon")
    dW = _normal_increments(int(seed), int(n_paths), grid.dt)
    n_table = kstar_midpoint_table(kernel, sigma, grid, rule=rule)
    constant_unit_sigma = sigma.bounds == (1.0, 1.0)
    if constant_unit_sigma:
        x_table = n_table
    else:
        from .operators import Volatility

        x_table = kstar_midpoint_table(kernel, Volatility.constant(1.0), grid,
                                       rule=rule)
    X = dW @ x_table.T
    N = X if constant_unit_sigma else dW @ n_table.T
    return PathEnsemble(
        grid=grid, n_paths=int(n_paths), dW=dW, X=X, N=N.copy() if N is X else N,
        seed=int(seed), kernel_id=kernel.id_string(), sigma_id=sigma.label,
    )


# -- statistical validation ---------------------------------------------------


def validate_covariance(ensemble, kernel, n_lattice=8, rule=DEFAULT_RULE,
                        covariance_fn=None):
    """Empirical Cov(X_t, X_s) against the kernel's R on a time lattice.

    The tolerance is 3 * stderr plus a discretization allowance for the
    midpoint-rule bias of the Wiener-integral tables, with two terms:

    * near-diagonal: dt**min(2, 2H) * max_t R(t, t) - the kernel behaves
      like (t-s)**(H-1/2) at its own diagonal;
    * s = 0 edge (fBm only): the kernel blows up like s**(1/2-H) there, so
      the midpoint rule under-integrates the first panels by
      ~ c(t) c(s) dt**(2-2H) with c(t) = c_H t**(2H-1)/(2H-1).

    Both terms are recorded in the report details.
    """
    if ensemble.n_paths < 1000:
        raise DomainError("covariance validation needs >= 1000 paths")
    from .operators import covariance_R

    cov_fn = covariance_fn or (lambda a, b: covariance_R(kernel, a, b, rule=rule))
    pts = ensemble.grid.points
    n = ensemble.grid.n_steps
    idx = np.unique(np.round(np.linspace(n / n_lattice, n, n_lattice)).astype(int))
    times = pts[idx]
    Xs = ensemble.X[:, idx]
    emp = (Xs.T @ Xs) / ensemble.n_paths
    theo = np.array([[cov_fn(float(a), float(b)) for b in times] for a in times])
    dt_max = float(np.max(ensemble.grid.dt))
    h_min = float(np.min(kernel.hurst_at(times))) if kernel.family != kernels.SIGN_TEST else 1.0
    base = dt_max ** min(2.0, 2.0 * h_min) * float(np.max(np.diag(theo)))
    if kernel.second_arg_power() < 0.0:
        H = kernel.hurst
        edge_c = kernel.c_h * times ** (2.0 * H - 1.0) / (2.0 * H - 1.0)
        edge = np.outer(edge_c, edge_c) * dt_max ** (2.0 - 2.0 * H)
    else:
        edge = np.zeros_like(theo)
    report = Report(
        title="covariance_validation",
        details={"allowance_base": base, "allowance_edge_max": float(np.max(edge)),
                 "n_paths": ensemble.n_paths},
    )
    for a in range(times.size):
        for b in range(a, times.size):
            stderr = np.sqrt(
                (theo[a, a] * theo[b, b] + theo[a, b] ** 2) / ensemble.n_paths
            )
            report.add(
                name=f"cov({times[a]:.6g},{times[b]:.6g})",
                lhs=emp[a, b], rhs=theo[a, b], stderr=stderr,
                tol=3.0 * stderr + base + float(edge[a, b]),
            )
    return report


def moment_checks(ensemble):
    """Zero-mean / increment-variance / Gaussian moment sanity battery.

    Skewness and excess kurtosis of every per-time marginal of N must stay
    inside 4 stderr; the report carries the worst time for each statistic.
    The N columns are strongly dependent across times, so the worst of the
    family stays well inside the single-test band.
    """
    report = Report(title="moment_checks")
    n = ensemble.n_paths
    dt = ensemble.grid.dt
    # dW variance, aggregated over steps (4 sigma per invariant)
    ratio = np.var(ensemble.dW, axis=0, ddof=1) / dt
    stderr = np.sqrt(2.0 / (n - 1))
    report.add("dW_variance_ratio_worst",
               lhs=float(ratio[np.argmax(np.abs(ratio - 1.0))]), rhs=1.0,
               stderr=stderr, tol=4.0 * stderr)
    cols = ensemble.N[:, 1:]
    means = np.mean(cols, axis=0)
    stds = np.std(cols, axis=0, ddof=1)
    z = (cols - means[None, :]) / stds[None, :]
    skew = np.mean(z**3, axis=0)
    exk = np.mean(z**4, axis=0) - 3.0
    k_mean = int(np.argmax(np.abs(means / stds)))
    report.add("N_mean_worst", lhs=float(means[k_mean]), rhs=0.0,
               stderr=float(stds[k_mean]) / np.sqrt(n),
               tol=4.0 * float(stds[k_mean]) / np.sqrt(n))
    k_s = int(np.argmax(np.abs(skew)))
    report.add(f"N_skewness_worst@t={ensemble.grid.points[1 + k_s]:.4g}",
               lhs=float(skew[k_s]), rhs=0.0, stderr=np.sqrt(6.0 / n),
               tol=4.0 * np.sqrt(6.0 / n))
    k_k = int(np.argmax(np.abs(exk)))
    report.add(f"N_excess_kurtosis_worst@t={ensemble.grid.points[1 + k_k]:.4g}",
               lhs=float(exk[k_k]), rhs=0.0, stderr=np.sqrt(24.0 / n),
               tol=4.0 * np.sqrt(24.0 / n))
    return report


# -- expectation-form identities ----------------------------------------------


@dataclass(frozen=True)
class C12Function:
    """A C^{1,2} test function with the derivative evaluators supplied."""

    f: Callable
    df_dt: Callable
    d2f_dx2: Callable
    df_dx: Optional[Callable] = None
    label: str = "F"


def _growth_lambda_estimate(values_by_x, xs, floor=1.0):
    """Smallest lambda' with |h(x)| <= c exp(lambda' x^2) on the sample.

    The constant c is read off the inner half of the box, so only genuine
    Gaussian-type tail growth (not linear or polynomial scale) registers.
    """
    half = 0.5 * float(np.max(np.abs(xs)))
    core = np.abs(xs) <= half
    c0 = max(float(np.max(np.abs(values_by_x[:, core]))), floor)
    outside = np.abs(xs) > half
    with np.errstate(divide="ignore"):
        lam = (np.log(np.maximum(np.abs(values_by_x[:, outside]), 1e-300)) - np.log(c0)) \
            / (xs[outside] ** 2)
    return float(np.max(lam))


def _grid_index(grid, t):
    i = int(np.argmin(np.abs(grid.points - t)))
    if abs(grid.points[i] - t) > 1e-9 * max(1.0, grid.T):
        raise DomainError(f"time {t} is not a grid point of the ensemble")
    return i


def expectation_heat_identity(ensemble, varcurve, h, s, n_hermite=96):
    """E[h(N_s)] against the Gaussian smoothing P_{Var(N_s)} h (0).

    The divergence-integral term of the underlying representation has zero
    mean, so the two sides must agree up to Monte Carlo error.  Raises
    GrowthViolationError when the sampled growth of h exceeds the
    (8 Var(N_T))^{-1} budget.
    """
    i = _grid_index(ensemble.grid, s)
    v = float(varcurve.var_at(s))
    col = ensemble.N[:, i]
    box = max(8.0 * np.sqrt(max(v, 1e-12)), float(np.max(np.abs(col))), 2.0)
    xs = np.linspace(-box, box, 2001)
    lam_est = _growth_lambda_estimate(np.asarray(h(xs))[None, :], xs)
    lam_max = 1.0 / (8.0 * float(varcurve.var[-1]))
    if lam_est >= lam_max:
        raise GrowthViolationError(
            f"h grows like exp({lam_est:.3g} x^2) >= (8 Var(N_T))^-1 = {lam_max:.3g}"
        )
    vals = np.asarray(h(col), dtype=float)
    lhs = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(ensemble.n_paths))
    rhs = gauss_hermite_expectation(h, v, n_nodes=n_hermite)
    report = Report(title="heat_identity", details={"s": s, "var": v})
    report.add(name=f"E[h(N_{s:.6g})]", lhs=lhs, rhs=rhs, stderr=stderr,
               tol=3.0 * stderr + 1e-12)
    return report


def ito_expectation_check(ensemble, varcurve, F, t):
    """Expectation form of the change-of-variable formula at time t.

    Per path:  F(t, N_t) - F(0,0) - int_0^t F_t ds - 1/2 int_0^t F_xx dVar,
    with both time integrals discretized by the trapezoid rule on the
    ensemble grid.  The pathwise mean must vanish within 3 stderr plus an
    O(dt) discretization allowance (recorded in the report details).
    """
    i = _grid_index(ensemble.grid, t)
    pts = ensemble.grid.points[: i + 1]
    N = ensemble.N[:, : i + 1]
    V = np.asarray(varcurve.var_at(pts))
    rate = np.asarray(varcurve.rate_at(pts))

    ft_vals = F.df_dt(pts[None, :], N)
    fxx_vals = F.d2f_dx2(pts[None, :], N)
    f_end = F.f(t, N[:, -1])

    # growth budget of Eq-(f) type, checked on the sampled box
    box = max(float(np.max(np.abs(N))), 2.0)
    xs = np.linspace(-box, box, 801)
    stacked = np.vstack([
        np.asarray(F.f(t, xs)) * np.ones_like(xs),
        np.asarray(F.df_dt(t, xs)) * np.ones_like(xs),
        np.asarray(F.d2f_dx2(t, xs)) * np.ones_like(xs),
    ])
    lam_est = _growth_lambda_estimate(stacked, xs)
    lam_max = 0.25 / float(varcurve.var[-1])
    if lam_est >= lam_max:
        raise GrowthViolationError(
            f"F grows like exp({lam_est:.3g} x^2) >= (4 sup Var)^-1 = {lam_max:.3g}"
        )

    dt = np.diff(pts)
    dV = np.diff(V)
    time_int = np.sum(0.5 * (ft_vals[:, :-1] + ft_vals[:, 1:]) * dt[None, :], axis=1)
    var_int = np.sum(0.5 * (fxx_vals[:, :-1] + fxx_vals[:, 1:]) * dV[None, :], axis=1)
    defect = f_end - float(F.f(0.0, 0.0)) - time_int - 0.5 * var_int

    mean = float(np.mean(defect))
    stderr = float(np.std(defect, ddof=1) / np.sqrt(ensemble.n_paths))
    scale = float(np.mean(np.abs(ft_vals)) + np.mean(np.abs(fxx_vals)) * np.max(rate))
    allowance = float(np.max(dt)) * max(scale, 1.0)
    report = Report(
        title="ito_expectation",
        details={"t": t, "allowance": allowance, "F": F.label},
    )
    report.add(name=f"ito_defect[{F.label}]@{t:.6g}", lhs=mean, rhs=0.0,
               stderr=stderr, tol=3.0 * stderr + allowance)
    return report
