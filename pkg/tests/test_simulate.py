"""Path generation, statistical validation and the expectation identities."""

import numpy as np
import pytest

from volterra_bsde import kernels, simulate
from volterra_bsde.errors import (
    DomainError,
    GrowthViolationError,
    ResourceBudgetError,
)
from volterra_bsde.simulate import C12Function, TimeGrid


def small_grid():
    return TimeGrid.uniform(0.0, 1.0, 64)


def test_time_grid_validation():
    with pytest.raises(DomainError):
        TimeGrid(np.array([0.0, 1.0]))  # n_steps >= 2
    with pytest.raises(DomainError):
        TimeGrid(np.array([0.0, 0.5, 0.4]))
    g = TimeGrid.uniform(0.1, 1.0, 8)
    assert g.t0 == 0.1 and g.T == 1.0 and g.n_steps == 8


def test_determinism_bit_identical(kernel_fbm, sigma_one):
    a = simulate.sample_paths(kernel_fbm, sigma_one, small_grid(), 64, seed=9)
    b = simulate.sample_paths(kernel_fbm, sigma_one, small_grid(), 64, seed=9)
    assert np.array_equal(a.dW, b.dW)
    assert np.array_equal(a.X, b.X)
    assert np.array_equal(a.N, b.N)
    c = simulate.sample_paths(kernel_fbm, sigma_one, small_grid(), 64, seed=10)
    assert not np.array_equal(a.dW, c.dW)


def test_path_prefix_stable_in_path_count(kernel_fbm, sigma_one):
    # streams are keyed by (seed, path): the first paths' increments never
    # change; path values agree up to BLAS reduction-order roundoff
    a = simulate.sample_paths(kernel_fbm, sigma_one, small_grid(), 16, seed=3)
    b = simulate.sample_paths(kernel_fbm, sigma_one, small_grid(), 64, seed=3)
    assert np.array_equal(a.dW, b.dW[:16])
    np.testing.assert_allclose(a.N, b.N[:16], atol=1e-13)


def test_memory_budget(kernel_fbm, sigma_one):
    with pytest.raises(ResourceBudgetError):
        simulate.sample_paths(kernel_fbm, sigma_one, small_grid(), 10,
                              seed=1, memory_budget=100)


def test_terminal_variance_and_mean(ensemble_fbm_10k):
    # Var(N_1) = 1 for fBm H = 3/4, sigma == 1
    n = ensemble_fbm_10k.n_paths
    end = ensemble_fbm_10k.N[:, -1]
    sample_var = float(np.var(end, ddof=1))
    stderr = 1.0 * np.sqrt(2.0 / (n - 1))
    assert abs(sample_var - 1.0) <= 3.0 * stderr
    means = np.mean(ensemble_fbm_10k.N, axis=0)
    stds = np.std(ensemble_fbm_10k.N, axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(means) <= 3.0 * stds + 1e-12)


def test_x_equals_n_for_unit_sigma(ensemble_fbm_10k):
    # N_t = int (K* 1) dW coincides with X_t when sigma == 1
    assert np.array_equal(ensemble_fbm_10k.X, ensemble_fbm_10k.N)


def test_sigma_scales_n(kernel_liou):
    from volterra_bsde.operators import Volatility

    base = simulate.sample_paths(kernel_liou, Volatility.constant(1.0),
                                 small_grid(), 32, seed=5)
    scaled = simulate.sample_paths(kernel_liou, Volatility.constant(2.0),
                                   small_grid(), 32, seed=5)
    np.testing.assert_allclose(scaled.N, 2.0 * base.N, atol=1e-12)
    np.testing.assert_allclose(scaled.X, base.X, atol=1e-12)


def test_moment_checks(ensemble_fbm_10k):
    report = simulate.moment_checks(ensemble_fbm_10k)
    assert report.passed


def test_midpoint_table_matches_kernel(kernel_fbm, sigma_one):
    grid = small_grid()
    table = simulate.kstar_midpoint_table(kernel_fbm, sigma_one, grid)
    mids = grid.midpoints
    for i, j in [(5, 2), (30, 29), (64, 0), (64, 63)]:
        expect = kernels.kernel_eval(kernel_fbm, float(grid.points[i]), float(mids[j]))
        assert table[i, j] == pytest.approx(expect, abs=1e-9)
    # strictly lower-triangular in the (point, step) sense
    assert np.all(table[np.triu_indices_from(table)] == 0.0)


# -- covariance validation -------------------------------------------------------


def test_validate_covariance_passes(ensemble_fbm_10k, kernel_fbm):
    closed = lambda a, b: 0.5 * (a**1.5 + b**1.5 - abs(a - b) ** 1.5)
    report = simulate.validate_covariance(ensemble_fbm_10k, kernel_fbm,
                                          covariance_fn=closed)
    assert report.passed
    assert len(report.rows) == 36  # upper triangle of the 8x8 lattice


def test_validate_covariance_negative_control(ensemble_fbm_10k):
    # deliberately wrong kernel: H = 0.6 covariance must be rejected
    wrong = lambda a, b: 0.5 * (a**1.2 + b**1.2 - abs(a - b) ** 1.2)
    report = simulate.validate_covariance(ensemble_fbm_10k, kernels.fbm(0.6, 1.0),
                                          covariance_fn=wrong)
    assert not report.passed


def test_validate_covariance_needs_paths(kernel_fbm, sigma_one):
    ens = simulate.sample_paths(kernel_fbm, sigma_one, small_grid(), 10, seed=2)
    with pytest.raises(DomainError):
        simulate.validate_covariance(ens, kernel_fbm)


def test_diagonal_entries_are_sample_variances(ensemble_fbm_10k, kernel_fbm):
    closed = lambda a, b: 0.5 * (a**1.5 + b**1.5 - abs(a - b) ** 1.5)
    report = simulate.validate_covariance(ensemble_fbm_10k, kernel_fbm,
                                          covariance_fn=closed)
    pts = ensemble_fbm_10k.grid.points
    for row in report.rows:
        a, b = map(float, row.name[4:-1].split(","))
        if a == b:
            i = int(np.argmin(np.abs(pts - a)))
            col = ensemble_fbm_10k.X[:, i]
            assert row.lhs == pytest.approx(float(np.mean(col**2)), rel=1e-12)


def test_cholesky_cross_check(kernel_fbm, sigma_one):
    # exact Cholesky sampling of X's law vs the midpoint-table construction:
    # the two ensembles must agree in covariance away from the t = 0 edge
    # (where the documented fBm midpoint bias concentrates)
    grid = TimeGrid.uniform(0.0, 1.0, 64)
    ens = simulate.sample_paths(kernel_fbm, sigma_one, grid, 4000, seed=314)
    sel = np.arange(16, 65, 8)
    ts = grid.points[sel]
    R = 0.5 * (ts[:, None] ** 1.5 + ts[None, :] ** 1.5
               - np.abs(ts[:, None] - ts[None, :]) ** 1.5)
    L = np.linalg.cholesky(R)
    rng = np.random.default_rng(314)
    exact = rng.standard_normal((4000, ts.size)) @ L.T
    emp_table = ens.X[:, sel].T @ ens.X[:, sel] / 4000
    emp_exact = exact.T @ exact / 4000
    scale = np.sqrt(np.outer(np.diag(R), np.diag(R)))
    # each estimate carries ~ sqrt(2/n) relative noise; allow their sum
    # plus a slice of the discretization allowance
    assert np.max(np.abs(emp_table - emp_exact) / scale) \
        <= 6.0 * np.sqrt(2.0 / 4000) + 0.05


# -- heat identity ----------------------------------------------------------------


def test_heat_identity_cos(ensemble_fbm_10k, varcurve_fbm):
    report = simulate.expectation_heat_identity(ensemble_fbm_10k, varcurve_fbm,
                                                np.cos, 1.0)
    row = report.rows[0]
    assert report.passed
    assert row.rhs == pytest.approx(np.exp(-0.5), abs=1e-9)
    assert abs(row.lhs - np.exp(-0.5)) <= 3.0 * row.stderr


def test_heat_identity_trivial_h(ensemble_fbm_10k, varcurve_fbm):
    one = lambda x: np.ones_like(np.asarray(x, dtype=float))
    report = simulate.expectation_heat_identity(ensemble_fbm_10k, varcurve_fbm,
                                                one, 1.0)
    assert report.rows[0].lhs == 1.0
    assert report.rows[0].rhs == pytest.approx(1.0, abs=1e-14)
    ident = lambda x: np.asarray(x, dtype=float)
    report = simulate.expectation_heat_identity(ensemble_fbm_10k, varcurve_fbm,
                                                ident, 1.0)
    assert report.rows[0].rhs == pytest.approx(0.0, abs=1e-12)
    assert report.passed


def test_heat_identity_growth_violation(ensemble_fbm_10k, varcurve_fbm):
    # exp(x^2) grows at lambda' = 1 >= (8 Var(N_1))^-1 = 1/8
    with pytest.raises(GrowthViolationError):
        simulate.expectation_heat_identity(ensemble_fbm_10k, varcurve_fbm,
                                           lambda x: np.exp(x**2), 1.0)


def test_heat_identity_off_grid_time(ensemble_fbm_10k, varcurve_fbm):
    with pytest.raises(DomainError):
        simulate.expectation_heat_identity(ensemble_fbm_10k, varcurve_fbm,
                                           np.cos, 0.1234567)


# -- expectation-form change-of-variable check ------------------------------------


def test_ito_square(ensemble_fbm_10k, varcurve_fbm):
    F = C12Function(
        f=lambda t, x: np.asarray(x) ** 2,
        df_dt=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        d2f_dx2=lambda t, x: 2.0 * np.ones_like(np.asarray(x, dtype=float)),
        label="x^2",
    )
    report = simulate.ito_expectation_check(ensemble_fbm_10k, varcurve_fbm, F, 1.0)
    assert report.passed


def test_ito_cube(ensemble_fbm_10k, varcurve_fbm):
    F = C12Function(
        f=lambda t, x: np.asarray(x) ** 3,
        df_dt=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        d2f_dx2=lambda t, x: 6.0 * np.asarray(x, dtype=float),
        label="x^3",
    )
    report = simulate.ito_expectation_check(ensemble_fbm_10k, varcurve_fbm, F, 0.75)
    assert report.passed


def test_ito_exponential(ensemble_fbm_10k, varcurve_fbm):
    F = C12Function(
        f=lambda t, x: np.exp(np.asarray(x) / 2.0),
        df_dt=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        d2f_dx2=lambda t, x: np.exp(np.asarray(x) / 2.0) / 4.0,
        label="exp(x/2)",
    )
    for t in (0.25, 0.5, 0.75):
        report = simulate.ito_expectation_check(ensemble_fbm_10k, varcurve_fbm, F, t)
        assert report.passed
        # the left side alone matches the Gaussian mgf oracle
        i = int(np.argmin(np.abs(ensemble_fbm_10k.grid.points - t)))
        lhs = float(np.mean(np.exp(ensemble_fbm_10k.N[:, i] / 2.0)))
        expect = float(np.exp(varcurve_fbm.var_at(t) / 8.0))
        stderr = float(np.std(np.exp(ensemble_fbm_10k.N[:, i] / 2.0), ddof=1)
                       / np.sqrt(ensemble_fbm_10k.n_paths))
        assert abs(lhs - expect) <= 3.0 * stderr + 1e-3


def test_ito_growth_violation(ensemble_fbm_10k, varcurve_fbm):
    F = C12Function(
        f=lambda t, x: np.exp(np.asarray(x) ** 2),
        df_dt=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        d2f_dx2=lambda t, x: np.exp(np.asarray(x) ** 2),
        label="exp(x^2)",
    )
    with pytest.raises(GrowthViolationError):
        simulate.ito_expectation_check(ensemble_fbm_10k, varcurve_fbm, F, 0.5)


# -- export -----------------------------------------------------------------------


def test_ensemble_csv(kernel_liou, sigma_one):
    ens = simulate.sample_paths(kernel_liou, sigma_one,
                                TimeGrid.uniform(0.0, 1.0, 4), 3, seed=1)
    text = ens.to_csv_text(max_paths=2)
    lines = text.strip().split("\n")
    assert lines[0] == "path_id,t,X,N"
    assert len(lines) == 1 + 2 * 5
    assert lines[1].startswith("0,0,")
