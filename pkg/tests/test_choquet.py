"""Distorted expectation, wealth functional, objective and gradient."""

import numpy as np
import pytest

from mhfdesign import (
    choquet_expectation,
    rdu_gradient,
    rdu_objective,
    wealth_after_premium,
)
from mhfdesign.choquet import build_lambda_hat, build_psi
from mhfdesign.models import Grid, measure_from_weighting
from mhfdesign.verify import closed_form_retention_quantile
from conftest import make_problem

UNIFORM = {"kind": "uniform", "scale": 1.0}
ATOM_LOSS = {"kind": "uniform_with_atom", "m0": 0.5, "scale": 1.0}


def small_problem(n=80, utility="exponential", alpha=1.0, theta=0.5, sigma=0.5,
                  weighting=lambda p: p ** 0.7, loss=ATOM_LOSS, gamma=0.1, beta=0.2):
    return make_problem(n, loss, weighting, utility, alpha, theta, sigma,
                        gamma=gamma, beta=beta)


def random_feasible(problem, rng):
    ub = problem.loss.h * problem.grid.dp
    delta = rng.uniform(0.0, 1.0, problem.grid.n) * ub
    return np.concatenate(([0.0], np.cumsum(delta)))


class TestChoquetExpectation:
    def test_constant_quantile(self):
        grid = Grid(64)
        mu = measure_from_weighting(lambda p: p ** 2, grid)
        assert choquet_expectation(np.full(65, 3.25), mu) == pytest.approx(3.25)

    def test_identity_quantile_lebesgue(self):
        grid = Grid(64)
        mu = measure_from_weighting(lambda p: p, grid)
        assert choquet_expectation(grid.nodes, mu) == pytest.approx(0.5, abs=1e-12)

    def test_identity_quantile_power_weighting(self):
        # closed form: int p * 2(1-p) dp = 1/3, midpoint rule error O(dp)
        for n in (100, 400):
            grid = Grid(n)
            mu = measure_from_weighting(lambda p: p ** 2, grid)
            got = choquet_expectation(grid.nodes, mu)
            assert got == pytest.approx(1.0 / 3.0, abs=0.1 / n)

    def test_decreasing_rejected(self):
        grid = Grid(16)
        mu = measure_from_weighting(lambda p: p, grid)
        with pytest.raises(ValueError, match="nondecreasing"):
            choquet_expectation(-grid.nodes, mu)

    def test_lebesgue_equals_trapezoid_mean(self):
        rng = np.random.default_rng(5)
        grid = Grid(128)
        mu = measure_from_weighting(lambda p: p, grid)
        y = np.sort(rng.normal(size=grid.n + 1))
        assert choquet_expectation(y, mu) == pytest.approx(grid.trapezoid(y), abs=1e-12)


class TestWealthFunctional:
    def test_zero_retention_gives_full_coverage_wealth(self):
        prob = small_problem()
        base = prob.wealth_base
        m = prob.market
        expected = (m.beta - m.gamma - m.theta * prob.loss.mean
                    - m.sigma * prob.loss.variance)
        got = wealth_after_premium(np.zeros(prob.grid.n + 1), base, prob.loss, m.sigma)
        assert got == pytest.approx(expected, abs=1e-14)

    def test_shift_identity(self):
        # adding a constant c to the retention adds c * theta
        prob = small_problem()
        rng = np.random.default_rng(11)
        base, loss, m = prob.wealth_base, prob.loss, prob.market
        for _ in range(100):
            f = rng.normal(size=loss.grid.n + 1)
            c = rng.normal()
            lhs = wealth_after_premium(f + c, base, loss, m.sigma)
            rhs = wealth_after_premium(f, base, loss, m.sigma) + c * m.theta
            assert abs(lhs - rhs) <= 1e-9

    def test_full_retention_cancels_to_beta_minus_gamma(self):
        prob = small_problem()
        m = prob.market
        got = wealth_after_premium(prob.loss.quantile, prob.wealth_base,
                                   prob.loss, m.sigma)
        assert got == pytest.approx(m.beta - m.gamma, abs=1e-12)

    def test_concavity_and_equality_characterization(self):
        prob = small_problem()
        base, loss, m = prob.wealth_base, prob.loss, prob.market
        rng = np.random.default_rng(23)
        ol = lambda f: wealth_after_premium(f, base, loss, m.sigma)
        for _ in range(100):
            f1 = rng.normal(size=loss.grid.n + 1)
            f2 = rng.normal(size=loss.grid.n + 1)
            eps = rng.uniform(0.05, 0.95)
            mix = ol(eps * f1 + (1 - eps) * f2)
            assert eps * ol(f1) + (1 - eps) * ol(f2) <= mix + 1e-12
            # equality holds exactly when the difference is a constant
            f3 = f1 + rng.normal()
            mix13 = ol(eps * f1 + (1 - eps) * f3)
            assert abs(eps * ol(f1) + (1 - eps) * ol(f3) - mix13) <= 1e-9

    def test_strict_gap_for_nonconstant_difference(self):
        prob = small_problem()
        base, loss, m = prob.wealth_base, prob.loss, prob.market
        n = loss.grid.n
        f1 = np.zeros(n + 1)
        f2 = loss.grid.nodes  # difference is not constant
        ol = lambda f: wealth_after_premium(f, base, loss, m.sigma)
        gap = ol(0.5 * (f1 + f2)) - 0.5 * (ol(f1) + ol(f2))
        assert gap > 1e-4


class TestObjective:
    def test_zero_retention_value(self):
        prob = small_problem()
        expected = float(prob.utility.value(np.array([prob.wealth_base.k]))[0])
        assert rdu_objective(np.zeros(prob.grid.n + 1), prob) == pytest.approx(
            expected, abs=1e-14)

    def test_linear_lebesgue_collapses(self):
        # linear utility and no distortion: J = W(g) - int g
        prob = small_problem(utility="linear", weighting=lambda p: p)
        rng = np.random.default_rng(2)
        for _ in range(20):
            g = random_feasible(prob, rng)
            expected = (wealth_after_premium(g, prob.wealth_base, prob.loss,
                                             prob.market.sigma)
                        - prob.grid.trapezoid(g))
            assert rdu_objective(g, prob) == pytest.approx(expected, abs=1e-9)

    def test_concavity_along_random_feasible_pairs(self):
        prob = small_problem()
        rng = np.random.default_rng(17)
        for _ in range(100):
            g1 = random_feasible(prob, rng)
            g2 = random_feasible(prob, rng)
            eps = rng.uniform(0.05, 0.95)
            mixed = rdu_objective(eps * g1 + (1 - eps) * g2, prob)
            assert mixed >= (eps * rdu_objective(g1, prob)
                             + (1 - eps) * rdu_objective(g2, prob) - 1e-10)

    def test_closed_form_optimum_beats_random_feasible(self, cf_1200):
        prob = cf_1200.problem
        g_star = closed_form_retention_quantile(prob.grid.nodes)
        j_star = rdu_objective(g_star, prob)
        rng = np.random.default_rng(41)
        for _ in range(50):
            g = random_feasible(prob, rng)
            assert j_star >= rdu_objective(g, prob) - 1e-12


class TestGradient:
    def test_linear_lebesgue_pattern(self):
        # with u' = 1 and Lebesgue weights the gradient is dp * w * (Psi' - 1)
        prob = small_problem(utility="linear", weighting=lambda p: p,
                             loss=UNIFORM)
        rng = np.random.default_rng(3)
        g = random_feasible(prob, rng)
        grid = prob.grid
        tw = grid.trapezoid_weights * grid.dp
        s = prob.market.sigma
        psi_prime = (prob.wealth_base.theta_eff
                     + 2 * s * (grid.trapezoid(g) - g + prob.loss.quantile))
        expected = tw * psi_prime - tw
        got = rdu_gradient(g, prob)
        assert np.max(np.abs(got - expected)) < 1e-9

    @pytest.mark.parametrize("weighting,utility", [
        (lambda p: p ** 0.7, "exponential"),
        (lambda p: p, "linear"),
    ])
    def test_against_central_differences(self, weighting, utility):
        prob = small_problem(n=60, utility=utility, weighting=weighting)
        rng = np.random.default_rng(19)
        step = 1e-5 * prob.loss.ess_sup
        for _ in range(10):
            g = random_feasible(prob, rng)
            grad = rdu_gradient(g, prob)
            fd = np.empty_like(grad)
            for i in range(g.size):
                up = g.copy(); up[i] += step
                dn = g.copy(); dn[i] -= step
                fd[i] = (rdu_objective(up, prob) - rdu_objective(dn, prob)) / (2 * step)
            assert np.max(np.abs(grad - fd)) <= 1e-6

    def test_gradient_with_atoms_against_central_differences(self):
        def w(p):
            return 0.75 * p + (0.25 if p > 0.5 else 0.0)

        prob = small_problem(n=64, weighting=w)
        rng = np.random.default_rng(29)
        step = 1e-5
        g = random_feasible(prob, rng)
        grad = rdu_gradient(g, prob)
        fd = np.empty_like(grad)
        for i in range(g.size):
            up = g.copy(); up[i] += step
            dn = g.copy(); dn[i] -= step
            fd[i] = (rdu_objective(up, prob) - rdu_objective(dn, prob)) / (2 * step)
        assert np.max(np.abs(grad - fd)) <= 1e-6

    def test_directional_derivative_at_closed_form_optimum(self, cf_1200):
        prob = cf_1200.problem
        g_star = closed_form_retention_quantile(prob.grid.nodes)
        grad = rdu_gradient(g_star, prob)
        rng = np.random.default_rng(5)
        ub = prob.loss.h * prob.grid.dp
        for _ in range(200):
            delta = rng.uniform(0, 1, prob.grid.n) * ub
            other = np.concatenate(([0.0], np.cumsum(delta)))
            assert grad @ (other - g_star) <= 1e-6


class TestTransforms:
    def test_psi_boundaries_any_feasible(self):
        prob = small_problem()
        rng = np.random.default_rng(31)
        for _ in range(20):
            g = random_feasible(prob, rng)
            psi = build_psi(g, prob)
            assert psi[-1] == pytest.approx(1.0, abs=1e-12)
            assert psi[0] == pytest.approx(1.0 - prob.market.theta, abs=1e-9)

    def test_lambda_hat_is_distribution_function(self):
        def w(p):  # jump at 0.25 exercises the atom path
            return 0.9 * p + (0.1 if p > 0.25 else 0.0)

        prob = small_problem(weighting=w)
        rng = np.random.default_rng(37)
        for _ in range(20):
            lam = build_lambda_hat(random_feasible(prob, rng), prob)
            assert lam[0] == 0.0
            assert lam[-1] == pytest.approx(1.0, abs=1e-14)
            assert np.all(np.diff(lam) >= -1e-15)

    def test_lambda_hat_linear_utility_is_measure_tail(self):
        def w(p):
            return 0.8 * p + (0.2 if p > 0.5 else 0.0)

        prob = small_problem(utility="linear", weighting=w)
        rng = np.random.default_rng(43)
        g = random_feasible(prob, rng)
        lam = build_lambda_hat(g, prob)
        # u' = 1 cancels: Lambda_hat(p) = mu((1-p, 1])
        mu = prob.measure
        masses = mu.cell_masses
        tail = np.concatenate(([0.0], np.cumsum(masses[::-1])))
        for loc, mass in mu.atoms:
            tail[prob.grid.nodes > (1 - loc) + 1e-12] += mass
        assert np.max(np.abs(lam - tail / tail[-1])) < 1e-12

    def test_lambda_hat_lebesgue_linear_is_identity(self):
        prob = small_problem(utility="linear", weighting=lambda p: p)
        g = np.zeros(prob.grid.n + 1)
        lam = build_lambda_hat(g, prob)
        assert np.max(np.abs(lam - prob.grid.nodes)) < 1e-12


class TestClamping:
    def test_extreme_risk_aversion_flags_clamp(self):
        from mhfdesign.choquet import ClampWarning

        prob = small_problem(n=80, alpha=2000.0)
        g = 0.5 * prob.loss.quantile
        with pytest.warns(ClampWarning):
            rdu_objective(g, prob)
        with pytest.warns(ClampWarning):
            rdu_gradient(g, prob)
        # the gauged evaluation the solver iterates on stays finite
        j_gauged, grad, clamped = prob._ws.evaluate(g, need_grad=True)
        assert clamped
        assert np.isfinite(j_gauged)
        assert np.all(np.isfinite(grad))
