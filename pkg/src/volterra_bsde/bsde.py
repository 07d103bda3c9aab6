"""(Y, Z) construction from the PDE, verification and diagnostics.

Y_t = u(t, N_t) and Z_t = -sigma_t u_x(t, N_t) are read off the PDE
solution along simulated paths.  The equation itself is verified through
its Brownian-side reduction: zeta_t = int rho dW has the same
one-dimensional marginals as N, and (u(t, zeta_t), rho_t u_x(t, zeta_t))
solves a classical BSDE whose Euler defect is measurable path by path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, PreconditionError
from .pde import bilinear_interp, solve_semilinear_picard
from .reporting import Report
from .simulate import _normal_increments

RHO_FLOOR = 1e-8
CLIP_FRACTION_LIMIT = 1e-3
COMPARISON_SLACK = 1e-8
ATOM_THRESHOLD_PATHS = 5.0


@dataclass
class BsdeSolution:
    """Per-path (Y, Z) read off a PDE solution along an ensemble."""

    ensemble_ref: object
    Y: np.ndarray
    Z: np.ndarray
    clip_fraction: float


def build_yz(sol, ensemble, sigma, terminal=None):
    """Evaluate Y = u(t, N_t), Z = -sigma_t u_x(t, N_t) by bilinear interpolation.

    Path points outside the PDE box are clamped; if more than 0.1% of them
    escape, the spatial domain was too small and a domain error is raised.
    When ``terminal`` is supplied, the last row of Y is overwritten with
    g(N_T) evaluated exactly.
    """
    times = ensemble.grid.points
    if times[0] < sol.tgrid[0] - 1e-9 or times[-1] > sol.tgrid[-1] + 1e-9:
        raise DomainError("ensemble grid extends beyond the PDE time grid")
    N = ensemble.N
    outside = (N < sol.xgrid[0]) | (N > sol.xgrid[-1])
    clip_fraction = float(np.mean(outside))
    if clip_fraction > CLIP_FRACTION_LIMIT:
        raise DomainError(
            f"{100 * clip_fraction:.3f}% of path points leave the PDE box "
            f"[{sol.xgrid[0]:g}, {sol.xgrid[-1]:g}]"
        )
    Y = bilinear_interp(sol.tgrid, sol.xgrid, sol.u, times, N)
    ux = bilinear_interp(sol.tgrid, sol.xgrid, sol.ux, times, N)
    Z = -np.asarray(sigma(times))[None, :] * ux
    if terminal is not None:
        Y[:, -1] = terminal(N[:, -1])
    return BsdeSolution(ensemble_ref=ensemble, Y=Y, Z=Z,
                        clip_fraction=clip_fraction)


# -- Brownian-side verification ------------------------------------------------


@dataclass
class BrownianSideRun:
    """zeta simulation and the Euler defect of (Ytilde, Ztilde)."""

    grid: object
    n_paths: int
    seed: int
    rho: np.ndarray
    zeta: np.ndarray
    Ytilde: np.ndarray
    Ztilde: np.ndarray
    residual_L2: float
    clamped_count: int

    def to_report(self):
        report = Report(title="brownian_side", details={
            "n_paths": self.n_paths, "seed": self.seed,
            "clamped_count": self.clamped_count,
        })
        report.add("residual_L2", lhs=self.residual_L2, rhs=0.0,
                   stderr=0.0, tol=np.inf)
        return report


def brownian_side_verify(sol, varcurve, sigma, f, g, grid, n_paths, seed,
                         rho_floor=RHO_FLOOR):
    """Simulate zeta = int rho dW and measure the discrete BSDE defect.

    Per path:
        R = Ytilde_{t0} - [ g(zeta_T) + sum f(t_i, zeta_i, Ytilde_i,
            -sigma_i Ztilde_i / rho_i) dt_i - sum Ztilde_i dW_i ].
    zeta increments use the exact variance spacing sqrt(dVar/dt) dW so the
    marginals match Var(N_t) identically; rho_i = sqrt(rate(t_i)) enters
    Ztilde.  residual_L2 is the root mean square of R over paths and must
    vanish under joint refinement.
    """
    pts = grid.points
    rate = np.asarray(varcurve.rate_at(pts), dtype=float)
    if np.any(rate <= 0.0):
        k = int(np.argmin(rate))
        raise PreconditionError(
            f"variance rate must be positive on the grid; rate({pts[k]:.6g}) = "
            f"{rate[k]:.3e}"
        )
    rho = np.sqrt(rate)
    dt = grid.dt
    V = np.asarray(varcurve.var_at(pts), dtype=float)
    rho_bar = np.sqrt(np.maximum(np.diff(V), 0.0) / dt)

    # zeta integrates rho dW from time zero: over [0, t0] that contributes an
    # initial N(0, Var(N_{t0})) value, drawn from the leading normal column.
    raw = _normal_increments(int(seed), int(n_paths),
                             np.concatenate(([1.0], dt)))
    dW = raw[:, 1:]
    zeta = np.empty((n_paths, pts.size))
    zeta[:, 0] = np.sqrt(max(V[0], 0.0)) * raw[:, 0]
    zeta[:, 1:] = zeta[:, 0][:, None] + np.cumsum(rho_bar[None, :] * dW, axis=1)

    Yt = bilinear_interp(sol.tgrid, sol.xgrid, sol.u, pts, zeta)
    Yt[:, -1] = g(zeta[:, -1])  # terminal row exact on the zeta side too
    ux = bilinear_interp(sol.tgrid, sol.xgrid, sol.ux, pts, zeta)
    Zt = rho[None, :] * ux

    clamped = int(np.sum(rho < rho_floor))
    rho_safe = np.maximum(rho, rho_floor)
    sig_vals = np.asarray(sigma(pts), dtype=float)
    z_arg = -sig_vals[None, :] * Zt / rho_safe[None, :]

    f_vals = f(pts[None, :-1], zeta[:, :-1], Yt[:, :-1], z_arg[:, :-1])
    riemann = np.sum(f_vals * dt[None, :], axis=1)
    stochastic = np.sum(Zt[:, :-1] * dW, axis=1)
    R = Yt[:, 0] - (g(zeta[:, -1]) + riemann - stochastic)
    residual = float(np.sqrt(np.mean(R**2)))
    return BrownianSideRun(
        grid=grid, n_paths=int(n_paths), seed=int(seed), rho=rho, zeta=zeta,
        Ytilde=Yt, Ztilde=Zt, residual_L2=residual, clamped_count=clamped,
    )


@dataclass
class RefinementStudy:
    steps: list
    residuals: list
    slope: float

    @property
    def monotone(self):
        return all(b < a for a, b in zip(self.residuals, self.residuals[1:]))


def residual_refinement_study(sol, varcurve, sigma, f, g, t0, T, n_paths, seed,
                              base_steps=64, n_levels=4):
    """residual_L2 across dyadic time refinements plus the log-log slope."""
    from .simulate import TimeGrid

    steps, residuals = [], []
    for level in range(n_levels):
        n = base_steps * 2**level
        run = brownian_side_verify(
            sol, varcurve, sigma, f, g, TimeGrid.uniform(t0, T, n),
            n_paths=n_paths, seed=seed + level, rho_floor=RHO_FLOOR,
        )
        steps.append(n)
        residuals.append(run.residual_L2)
    dts = (T - t0) / np.asarray(steps, dtype=float)
    slope = float(np.polyfit(np.log(dts), np.log(residuals), 1)[0])
    return RefinementStudy(steps=steps, residuals=residuals, slope=slope)


# -- comparison harness --------------------------------------------------------


@dataclass
class ComparisonReport:
    min_gap_u: float
    min_gap_Y: Optional[float]
    worst_point: tuple
    passed: bool
    sol1: object = None
    sol2: object = None

    def to_report(self):
        report = Report(title="comparison", details={"worst_point": self.worst_point})
        report.add_row("u1_ge_u2", lhs=self.min_gap_u, rhs=0.0, stderr=0.0,
                       tol=COMPARISON_SLACK, passed=self.passed)
        if self.min_gap_Y is not None:
            report.add_row("Y1_ge_Y2", lhs=self.min_gap_Y, rhs=0.0, stderr=0.0,
                           tol=COMPARISON_SLACK,
                           passed=self.min_gap_Y >= -COMPARISON_SLACK)
        return report


def _check_ordered_terminal(g1, g2, xgrid):
    d = g1(xgrid) - g2(xgrid)
    if np.any(d < -1e-12):
        k = int(np.argmin(d))
        raise PreconditionError(
            f"g1 < g2 at x = {xgrid[k]:.6g} (gap {d[k]:.3e})"
        )


def _check_ordered_driver(f1, f2, tgrid, xgrid, y_range, z_range, n=5):
    ts = np.linspace(tgrid[0], tgrid[-1], n)
    xs = np.linspace(xgrid[0], xgrid[-1], 2 * n - 1)
    ys = np.linspace(*y_range, n)
    zs = np.linspace(*z_range, n)
    T, X, Y, Z = np.meshgrid(ts, xs, ys, zs, indexing="ij")
    d = f1(T, X, Y, Z) - f2(T, X, Y, Z)
    if np.any(d < -1e-12):
        k = np.unravel_index(int(np.argmin(d)), d.shape)
        raise PreconditionError(
            f"f1 < f2 at (t,x,y,z) = ({T[k]:.4g}, {X[k]:.4g}, {Y[k]:.4g}, "
            f"{Z[k]:.4g}) (gap {float(d[k]):.3e})"
        )


def compare(problem1, problem2, varcurve, tgrid, xgrid, sigma,
            ensemble=None, tol=1e-10, max_iter=60):
    """Solve two ordered problems and check u1 >= u2 - 1e-8 everywhere.

    ``problem*`` are (driver, terminal) pairs with f1 >= f2 and g1 >= g2
    (checked on sampled boxes; violations raise PreconditionError naming
    the point).  With an ensemble supplied, the induced Y paths are
    compared as well.
    """
    f1, g1 = problem1
    f2, g2 = problem2
    xgrid = np.asarray(xgrid, dtype=float)
    tgrid = np.asarray(tgrid, dtype=float)
    _check_ordered_terminal(g1, g2, xgrid)

    sol1 = solve_semilinear_picard(f1, g1, varcurve, tgrid, xgrid, tol=tol,
                                   max_iter=max_iter, sigma=sigma)
    sol2 = solve_semilinear_picard(f2, g2, varcurve, tgrid, xgrid, tol=tol,
                                   max_iter=max_iter, sigma=sigma)
    y_lo = float(min(np.min(sol1.u), np.min(sol2.u))) - 1.0
    y_hi = float(max(np.max(sol1.u), np.max(sol2.u))) + 1.0
    z_scale = float(max(np.max(np.abs(sol1.ux)), np.max(np.abs(sol2.ux)))) + 1.0
    z_scale *= float(sigma(tgrid).max()) if sigma is not None else 1.0
    _check_ordered_driver(f1, f2, tgrid, xgrid, (y_lo, y_hi), (-z_scale, z_scale))

    gap = sol1.u - sol2.u
    k = np.unravel_index(int(np.argmin(gap)), gap.shape)
    min_gap = float(gap[k])
    worst = (float(tgrid[k[0]]), float(xgrid[k[1]]))
    min_gap_Y = None
    if ensemble is not None:
        b1 = build_yz(sol1, ensemble, sigma, terminal=g1)
        b2 = build_yz(sol2, ensemble, sigma, terminal=g2)
        min_gap_Y = float(np.min(b1.Y - b2.Y))
    return ComparisonReport(
        min_gap_u=min_gap, min_gap_Y=min_gap_Y, worst_point=worst,
        passed=min_gap >= -COMPARISON_SLACK, sol1=sol1, sol2=sol2,
    )


# -- density diagnostics ---------------------------------------------------------


@dataclass
class DensityDiagnostic:
    """Malliavin-norm square of Y_t per path plus an empirical atom detector."""

    t: float
    malliavin_sq: np.ndarray
    min_over_paths: float
    kde_bandwidth: float
    max_cdf_jump: float
    atom_threshold: float

    # a path sitting exactly on a critical point of u never happens in
    # floating point; "nonzero gradient on every path" is read as bounded
    # away from zero relative to the ensemble's scale
    GRADIENT_REL_FLOOR = 1e-6

    @property
    def gradient_hypothesis_holds(self):
        """Nonvanishing-gradient hypothesis: u_x(t, N_t) != 0 on every path."""
        scale = float(np.max(self.malliavin_sq))
        return self.min_over_paths > self.GRADIENT_REL_FLOOR * scale

    @property
    def continuity_not_rejected(self):
        return self.max_cdf_jump <= self.atom_threshold


def density_diagnostic(sol, ensemble, varcurve, t):
    """Per-path (u_x(t, N_t))^2 Var(N_t) and the largest empirical CDF jump."""
    pts = ensemble.grid.points
    if not (pts[0] < t < pts[-1]):
        raise DomainError(f"diagnostic time {t} outside the open window "
                          f"({pts[0]:g}, {pts[-1]:g})")
    i = int(np.argmin(np.abs(pts - t)))
    if abs(pts[i] - t) > 1e-9 * max(1.0, pts[-1]):
        raise DomainError(f"time {t} is not a grid point of the ensemble")
    v = float(varcurve.var_at(t))
    N_t = ensemble.N[:, i]
    ux = bilinear_interp(sol.tgrid, sol.xgrid, sol.ux, np.asarray([pts[i]]),
                         N_t[:, None])[:, 0]
    msq = ux**2 * v
    Y_t = bilinear_interp(sol.tgrid, sol.xgrid, sol.u, np.asarray([pts[i]]),
                          N_t[:, None])[:, 0]
    n = Y_t.size
    ys = np.sort(Y_t)
    # multiplicity of equal sorted values = size of the largest CDF jump
    boundaries = np.flatnonzero(np.diff(ys) > 0.0)
    counts = np.diff(np.concatenate(([-1], boundaries, [n - 1])))
    max_jump = float(np.max(counts)) / n
    std = float(np.std(ys, ddof=1))
    iqr = float(np.subtract(*np.percentile(ys, [75, 25])))
    width = min(std, iqr / 1.34) if iqr > 0 else std
    bandwidth = 0.9 * width * n ** (-0.2)
    return DensityDiagnostic(
        t=float(t), malliavin_sq=msq, min_over_paths=float(np.min(msq)),
        kde_bandwidth=float(bandwidth), max_cdf_jump=max_jump,
        atom_threshold=ATOM_THRESHOLD_PATHS / n,
    )
