"""PDE solvers against closed forms and each other."""

import numpy as np
import pytest

from volterra_bsde import pde
from volterra_bsde.errors import (
    ConvergenceError,
    DomainError,
    GrowthViolationError,
    InstabilityError,
    PreconditionError,
)

BUDGET = pde.GrowthBudget(c=8.0, lam=0.05)


def terminal(fn, label):
    return pde.TerminalCondition(g_fn=fn, growth=BUDGET, label=label)


G_X = terminal(lambda x: np.asarray(x, dtype=float), "x")
G_X2 = terminal(lambda x: np.asarray(x, dtype=float) ** 2, "x^2")
G_COS = terminal(np.cos, "cos")
G_ONE = terminal(lambda x: np.ones_like(np.asarray(x, dtype=float)), "1")

F_ZERO = pde.ZERO_DRIVER
F_ONE = pde.Driver(f_fn=lambda t, x, y, z: np.ones(np.broadcast(t, x, y, z).shape),
                   lipschitz_yz=0.0, label="1")
F_MINUS_Y = pde.Driver(f_fn=lambda t, x, y, z: -np.asarray(y, dtype=float)
                       * np.ones(np.broadcast(t, x, y, z).shape),
                       lipschitz_yz=1.0, label="-y")


@pytest.fixture(scope="module")
def tgrid():
    return np.linspace(0.05, 1.0, 201)


# -- heat convolution ------------------------------------------------------------


def test_heat_convolve_normalization(xgrid_wide):
    out = pde.heat_convolve(np.ones_like(xgrid_wide), 2.0, xgrid_wide)
    np.testing.assert_allclose(out, 1.0, atol=1e-14)


def test_heat_convolve_fixes_affine(xgrid_wide):
    h = 3.0 * xgrid_wide - 1.0
    out = pde.heat_convolve(h, 2.0, xgrid_wide)
    np.testing.assert_allclose(out, h, atol=1e-12)


def test_heat_convolve_second_moment(xgrid_wide):
    out = pde.heat_convolve(xgrid_wide**2, 2.0, xgrid_wide)
    mid = np.argmin(np.abs(xgrid_wide))
    # oracle: Gaussian second moment; the piecewise-linear reading of x^2
    # carries an interpolation bias of dx^2/6
    assert out[mid] == pytest.approx(2.0, abs=1e-3)


def test_heat_convolve_zero_variance(xgrid_wide):
    h = np.sin(xgrid_wide)
    out = pde.heat_convolve(h, 0.0, xgrid_wide)
    assert np.array_equal(out, h)


def test_heat_convolve_tiny_variance_stays_exact(xgrid_wide):
    # v far below dx^2 must not degrade: the closed form has no grid limit
    h = np.abs(xgrid_wide)
    out = pde.heat_convolve(h, 1e-8, xgrid_wide)
    np.testing.assert_allclose(out[10:-10], h[10:-10], atol=1e-4)


def test_heat_convolve_semigroup(xgrid_wide):
    # P_a P_b = P_{a+b} away from the truncation boundary (the linear tail
    # extension is applied at a different state in the two routes)
    h = np.cos(xgrid_wide)
    one_shot = pde.heat_convolve(h, 1.0, xgrid_wide)
    two_step = pde.heat_convolve(pde.heat_convolve(h, 0.4, xgrid_wide), 0.6,
                                 xgrid_wide)
    interior = np.abs(xgrid_wide) <= 6.0
    np.testing.assert_allclose(two_step[interior], one_shot[interior], atol=5e-4)


def test_heat_convolve_rejects_negative_variance(xgrid_wide):
    with pytest.raises(DomainError):
        pde.heat_convolve(np.ones_like(xgrid_wide), -1.0, xgrid_wide)


# -- linear solve ------------------------------------------------------------------


def test_solve_linear_affine_invariance(varcurve_fbm, tgrid, xgrid_wide):
    sol = pde.solve_linear(G_X, varcurve_fbm, tgrid, xgrid_wide)
    np.testing.assert_allclose(
        sol.u, np.broadcast_to(xgrid_wide, sol.u.shape), atol=1e-12
    )
    np.testing.assert_allclose(sol.ux, np.ones_like(sol.ux), atol=1e-10)


def test_solve_linear_square(varcurve_fbm, tgrid, xgrid_wide):
    sol = pde.solve_linear(G_X2, varcurve_fbm, tgrid, xgrid_wide)
    mid = np.argmin(np.abs(xgrid_wide))
    expect = 1.0 - np.asarray(varcurve_fbm.var_at(tgrid))
    np.testing.assert_allclose(sol.u[:, mid], expect, atol=1e-3)


def test_solve_linear_cos(varcurve_fbm, tgrid, xgrid_wide):
    sol = pde.solve_linear(G_COS, varcurve_fbm, tgrid, xgrid_wide)
    mid = np.argmin(np.abs(xgrid_wide))
    dv = varcurve_fbm.var_at(1.0) - np.asarray(varcurve_fbm.var_at(tgrid))
    np.testing.assert_allclose(sol.u[:, mid], np.exp(-dv / 2.0), atol=1e-3)


def test_growth_budget_enforced(varcurve_fbm, tgrid, xgrid_wide):
    tight = pde.TerminalCondition(
        g_fn=lambda x: np.exp(np.asarray(x) ** 2),
        growth=pde.GrowthBudget(c=1.0, lam=0.05), label="exp(x^2)",
    )
    with pytest.raises(GrowthViolationError):
        pde.solve_linear(tight, varcurve_fbm, tgrid, xgrid_wide)
    over = pde.TerminalCondition(
        g_fn=lambda x: np.asarray(x, dtype=float),
        growth=pde.GrowthBudget(c=8.0, lam=0.3), label="x",
    )
    with pytest.raises(GrowthViolationError):
        # lambda = 0.3 >= (4 Var(N_1))^-1 = 0.25
        pde.solve_linear(over, varcurve_fbm, tgrid, xgrid_wide)


# -- Picard on the mild form -------------------------------------------------------


def test_picard_zero_driver_is_linear(varcurve_fbm, tgrid, xgrid_wide, sigma_one):
    lin = pde.solve_linear(G_COS, varcurve_fbm, tgrid, xgrid_wide)
    sol = pde.solve_semilinear_picard(F_ZERO, G_COS, varcurve_fbm, tgrid,
                                      xgrid_wide, sigma=sigma_one)
    assert sol.iterations == 1
    np.testing.assert_allclose(sol.u, lin.u, atol=1e-12)


def test_picard_constant_source(varcurve_fbm, tgrid, xgrid_wide, sigma_one):
    sol = pde.solve_semilinear_picard(F_ONE, G_X, varcurve_fbm, tgrid,
                                      xgrid_wide, sigma=sigma_one)
    expect = xgrid_wide[None, :] + (1.0 - tgrid)[:, None]
    np.testing.assert_allclose(sol.u, expect, atol=1e-4)


def test_picard_exponential_decay(varcurve_fbm, tgrid, xgrid_wide, sigma_one):
    sol = pde.solve_semilinear_picard(F_MINUS_Y, G_ONE, varcurve_fbm, tgrid,
                                      xgrid_wide, sigma=sigma_one)
    expect = np.exp(-(1.0 - tgrid))[:, None] * np.ones_like(xgrid_wide)[None, :]
    np.testing.assert_allclose(sol.u, expect, atol=1e-4)


def test_picard_contraction_history(varcurve_fbm, tgrid, xgrid_wide, sigma_one):
    sol = pde.solve_semilinear_picard(F_MINUS_Y, G_ONE, varcurve_fbm, tgrid,
                                      xgrid_wide, sigma=sigma_one)
    hist = [c for c in sol.change_history if c > 10 * 1e-9]
    assert all(b < a for a, b in zip(hist[1:], hist[2:]))  # monotone after sweep 2
    assert sol.residual <= 1e-9


def test_picard_nonconvergence_carries_history(varcurve_fbm, tgrid, xgrid_wide,
                                               sigma_one):
    with pytest.raises(ConvergenceError) as err:
        pde.solve_semilinear_picard(F_MINUS_Y, G_ONE, varcurve_fbm, tgrid,
                                    xgrid_wide, sigma=sigma_one, max_iter=3)
    assert len(err.value.history) == 3


def test_picard_terminal_row_exact(varcurve_fbm, tgrid, xgrid_wide, sigma_one):
    sol = pde.solve_semilinear_picard(F_MINUS_Y, G_COS, varcurve_fbm, tgrid,
                                      xgrid_wide, sigma=sigma_one)
    assert np.array_equal(sol.u[-1], np.cos(xgrid_wide))


def test_picard_lipschitz_precondition(varcurve_fbm, tgrid, xgrid_wide, sigma_one):
    lying = pde.Driver(f_fn=lambda t, x, y, z: -10.0 * np.asarray(y, dtype=float)
                       * np.ones(np.broadcast(t, x, y, z).shape),
                       lipschitz_yz=1.0, label="-10y")
    with pytest.raises(PreconditionError):
        pde.solve_semilinear_picard(lying, G_ONE, varcurve_fbm, tgrid,
                                    xgrid_wide, sigma=sigma_one)


# -- theta scheme ------------------------------------------------------------------


def test_fd_matches_linear_solution(varcurve_fbm, tgrid, xgrid_wide, sigma_one):
    sol = pde.solve_semilinear_fd(F_ZERO, G_X2, varcurve_fbm, tgrid, xgrid_wide,
                                  theta=1.0, sigma=sigma_one)
    lin = pde.solve_linear(G_X2, varcurve_fbm, tgrid, xgrid_wide)
    assert np.max(np.abs(sol.u - lin.u)) <= 5e-3


def test_fd_exponential_decay_512(varcurve_fbm, xgrid_wide, sigma_one):
    tg = np.linspace(0.05, 1.0, 513)
    sol = pde.solve_semilinear_fd(F_MINUS_Y, G_ONE, varcurve_fbm, tg, xgrid_wide,
                                  theta=1.0, sigma=sigma_one)
    expect = np.exp(-(1.0 - tg))[:, None]
    assert np.max(np.abs(sol.u - expect)) <= 1e-3


def test_fd_theta_difference_shrinks_linearly(varcurve_fbm, xgrid_wide, sigma_one):
    # lagged nonlinearity: theta=1/2 vs theta=1 differ at O(dt)
    gaps = []
    for n in (50, 100, 200):
        tg = np.linspace(0.05, 1.0, n + 1)
        a = pde.solve_semilinear_fd(F_MINUS_Y, G_COS, varcurve_fbm, tg,
                                    xgrid_wide, theta=0.5, sigma=sigma_one)
        b = pde.solve_semilinear_fd(F_MINUS_Y, G_COS, varcurve_fbm, tg,
                                    xgrid_wide, theta=1.0, sigma=sigma_one)
        gaps.append(np.max(np.abs(a.u - b.u)))
    assert gaps[0] > gaps[1] > gaps[2]
    rate = np.log2(gaps[0] / gaps[2]) / 2.0
    assert 0.7 <= rate <= 1.3


def test_fd_explicit_instability_guard(varcurve_fbm, sigma_one):
    # theta = 0 on a fine spatial grid violates the parabolic CFL badly
    xg = np.linspace(-10.0, 10.0, 801)
    tg = np.linspace(0.05, 1.0, 21)
    with pytest.raises(InstabilityError):
        pde.solve_semilinear_fd(F_ZERO, G_COS, varcurve_fbm, tg, xg, theta=0.0,
                                sigma=sigma_one)


def test_fd_theta_domain(varcurve_fbm, tgrid, xgrid_wide, sigma_one):
    with pytest.raises(DomainError):
        pde.solve_semilinear_fd(F_ZERO, G_X, varcurve_fbm, tgrid, xgrid_wide,
                                theta=1.5, sigma=sigma_one)


# -- mutual oracle and comparison ---------------------------------------------------


@pytest.mark.parametrize("driver,g", [(F_ZERO, G_X), (F_ONE, G_X),
                                      (F_MINUS_Y, G_ONE), (F_ZERO, G_X2)])
def test_mild_fd_agreement(driver, g, varcurve_fbm, tgrid, xgrid_wide, sigma_one):
    mild = pde.solve_semilinear_picard(driver, g, varcurve_fbm, tgrid,
                                       xgrid_wide, sigma=sigma_one)
    fd = pde.solve_semilinear_fd(driver, g, varcurve_fbm, tgrid, xgrid_wide,
                                 theta=1.0, sigma=sigma_one)
    dt = float(np.max(np.diff(tgrid)))
    dx = float(np.mean(np.diff(xgrid_wide)))
    tol = max(5e-3, 10.0 * (dt + dx**2))
    assert np.max(np.abs(mild.u - fd.u)) <= tol


def test_pde_level_comparison_monotonicity(varcurve_fbm, tgrid, xgrid_wide,
                                           sigma_one):
    g_hi = terminal(lambda x: np.asarray(x, dtype=float) + 0.1, "x+0.1")
    hi = pde.solve_semilinear_picard(F_MINUS_Y, g_hi, varcurve_fbm, tgrid,
                                     xgrid_wide, sigma=sigma_one)
    lo = pde.solve_semilinear_picard(F_MINUS_Y, G_X, varcurve_fbm, tgrid,
                                     xgrid_wide, sigma=sigma_one)
    assert np.all(hi.u >= lo.u - 1e-8)


# -- gradient ----------------------------------------------------------------------


def test_gradient_affine_and_quadratic(xgrid_wide):
    u = np.tile(xgrid_wide, (3, 1))
    np.testing.assert_allclose(pde.gradient_x(u, xgrid_wide),
                               np.ones_like(u), atol=1e-12)
    u2 = np.tile(xgrid_wide**2, (3, 1))
    np.testing.assert_allclose(pde.gradient_x(u2, xgrid_wide),
                               np.broadcast_to(2.0 * xgrid_wide, u2.shape),
                               atol=1e-9)


def test_gradient_even_function_vanishes_at_origin(varcurve_fbm, tgrid, xgrid_wide):
    sol = pde.solve_linear(G_COS, varcurve_fbm, tgrid, xgrid_wide)
    mid = np.argmin(np.abs(xgrid_wide))
    np.testing.assert_allclose(sol.ux[:, mid], 0.0, atol=1e-10)


def test_ux_matches_central_differences(varcurve_fbm, tgrid, xgrid_wide):
    sol = pde.solve_linear(G_COS, varcurve_fbm, tgrid, xgrid_wide)
    dx = np.mean(np.diff(xgrid_wide))
    central = (sol.u[:, 2:] - sol.u[:, :-2]) / (2.0 * dx)
    assert np.max(np.abs(sol.ux[:, 1:-1] - central)) <= 10.0 * dx**2


# -- exports -----------------------------------------------------------------------


def test_solution_csv(varcurve_fbm, xgrid_wide):
    tg = np.linspace(0.05, 1.0, 5)
    xg = np.linspace(-2.0, 2.0, 9)
    sol = pde.solve_linear(G_X, varcurve_fbm, tg, xg)
    text = sol.to_csv_text()
    lines = text.strip().split("\n")
    assert lines[0].startswith("# method=linear")
    assert "t,x,u,ux" in lines
    assert len([l for l in lines if not l.startswith("#")]) == 1 + 5 * 9
