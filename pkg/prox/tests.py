from unittest import TestCase

import numpy as np

from problems.models import LocalObjective, ObjectiveKind
from problems.objectives import nonsmooth_value
from simulator.exceptions import DegenerateParameterError, NonconvergedError, ParameterError

from .models import QuadraticTerm
from .solvers import (
    accelerated_proximal_gradient,
    l1_residual,
    polyhedral_residual,
    polyhedral_rows,
    soft_threshold,
    solve_lasso_quadratic,
    solve_nonsmooth,
    solve_smooth,
)

TOL = 1e-10


def random_quadratic(rng, d=3, m=5):
    A = rng.standard_normal((m, d))
    alpha = rng.uniform(0.0, 5.0)
    beta = rng.uniform(0.1, 5.0)
    return QuadraticTerm(M=alpha * A.T @ A / m + beta * np.eye(d), linear=3.0 * rng.standard_normal(d))


def random_l1_objective(rng, d=3, m=5, lam=None):
    return LocalObjective(
        kind=ObjectiveKind.L1_LASSO,
        A=rng.standard_normal((m, d)),
        b=rng.standard_normal(m),
        lam=rng.uniform(0.0, 0.5) if lam is None else lam,
    )


def nonsmooth_residual(beta, linear, obj, x):
    K, shift, weights = polyhedral_rows(obj.A, obj.b, 1.0 / obj.m, obj.lam)
    return polyhedral_residual(beta * x + linear, x, K, shift, weights)


class SoftThresholdTests(TestCase):
    def test_scalar_examples(self):
        np.testing.assert_array_equal(soft_threshold([3.0, 0.5, -3.0], 1.0), [2.0, 0.0, -2.0])

    def test_zero_threshold_is_identity(self):
        v = np.array([1.5, -0.2, 0.0])
        np.testing.assert_array_equal(soft_threshold(v, 0.0), v)

    def test_negative_threshold_rejected(self):
        with self.assertRaises(ParameterError):
            soft_threshold([1.0], -0.1)


class SmoothSolveTests(TestCase):
    def test_diagonal(self):
        result = solve_smooth(QuadraticTerm(M=2 * np.eye(2), linear=[4.0, -2.0]))
        np.testing.assert_allclose(result.x, [-2.0, 1.0])
        self.assertLessEqual(result.residual, TOL)

    def test_zero_linear_term(self):
        result = solve_smooth(QuadraticTerm(M=np.eye(3), linear=np.zeros(3)))
        np.testing.assert_array_equal(result.x, np.zeros(3))

    def test_coupled_two_by_two(self):
        result = solve_smooth(QuadraticTerm(M=[[2.0, 1.0], [1.0, 2.0]], linear=[-3.0, -3.0]))
        np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-14)

    def test_indefinite_matrix_is_degenerate(self):
        with self.assertRaises(DegenerateParameterError):
            solve_smooth(QuadraticTerm(M=[[1.0, 0.0], [0.0, -1.0]], linear=[0.0, 0.0]))


class LassoSolveTests(TestCase):
    def test_diagonal_example(self):
        result = solve_lasso_quadratic(QuadraticTerm(M=2 * np.eye(2), linear=[-3.0, 0.5]), lam=1.0)
        np.testing.assert_allclose(result.x, [1.0, 0.0], atol=1e-12)

    def test_small_coefficient_is_killed(self):
        result = solve_lasso_quadratic(QuadraticTerm(M=np.eye(1), linear=[-0.3]), lam=1.0)
        np.testing.assert_array_equal(result.x, [0.0])

    def test_zero_weight_matches_smooth_solve(self):
        rng = np.random.default_rng(4)
        Q = random_quadratic(rng)
        lasso = solve_lasso_quadratic(Q, lam=0.0, tol=TOL)
        smooth = solve_smooth(Q)
        np.testing.assert_allclose(lasso.x, smooth.x, atol=10 * TOL)

    def test_diagonal_matches_closed_form(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            diag = rng.uniform(0.1, 10.0, size=4)
            linear = 3.0 * rng.standard_normal(4)
            lam = rng.uniform(0.0, 2.0)
            expected = soft_threshold(-linear, lam) / diag
            # start away from the answer so the iterative path is exercised
            result = solve_lasso_quadratic(
                QuadraticTerm(M=np.diag(diag), linear=linear), lam=lam, tol=TOL, x0=rng.standard_normal(4)
            )
            np.testing.assert_allclose(result.x, expected, atol=1e-8)

    def test_random_subproblems_certified(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            Q = random_quadratic(rng)
            lam = rng.uniform(0.0, 2.0)
            result = solve_lasso_quadratic(Q, lam=lam, tol=TOL, max_inner=5000)
            # recomputed from scratch rather than trusting result.residual
            self.assertLessEqual(l1_residual(Q.M @ result.x + Q.linear, result.x, lam), 10 * TOL)

    def test_two_starts_agree(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            A = rng.standard_normal((5, 3))
            Q = QuadraticTerm(M=A.T @ A / 5 + np.eye(3), linear=3.0 * rng.standard_normal(3))
            first = solve_lasso_quadratic(Q, lam=0.5, tol=TOL)
            second = solve_lasso_quadratic(Q, lam=0.5, tol=TOL, x0=10.0 * rng.standard_normal(3))
            self.assertLessEqual(np.linalg.norm(first.x - second.x), 10 * TOL)

    def test_negative_weight_rejected(self):
        with self.assertRaises(ParameterError):
            solve_lasso_quadratic(QuadraticTerm(M=np.eye(1), linear=[0.0]), lam=-1.0)

    def test_exhausted_budget_carries_best_iterate(self):
        rng = np.random.default_rng(8)
        M = np.diag([1e4, 1.0, 1e-2])
        Q = QuadraticTerm(M=M, linear=rng.standard_normal(3))
        with self.assertRaises(NonconvergedError) as ctx:
            accelerated_proximal_gradient(
                objective=lambda x: Q.value(x) + 0.1 * np.abs(x).sum(),
                gradient=Q.gradient,
                prox=lambda v, step: soft_threshold(v, 0.1 * step),
                step=1e-4,
                x0=np.full(3, 50.0),
                residual=lambda x: l1_residual(Q.gradient(x), x, 0.1),
                tol=1e-14,
                max_iter=3,
            )
        self.assertEqual(ctx.exception.best_x.shape, (3,))
        self.assertGreater(ctx.exception.residual, 1e-14)


class RestartTests(TestCase):
    def test_objective_never_increases_over_restarts(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            U, _ = np.linalg.qr(rng.standard_normal((6, 6)))
            M = U @ np.diag(np.logspace(-2, 2, 6)) @ U.T
            M = 0.5 * (M + M.T)
            Q = QuadraticTerm(M=M, linear=rng.standard_normal(6))
            lam = 0.05

            def objective(x):
                return Q.value(x) + lam * float(np.abs(x).sum())

            x0 = 20.0 * rng.standard_normal(6)
            result = accelerated_proximal_gradient(
                objective=objective,
                gradient=Q.gradient,
                prox=lambda v, step: soft_threshold(v, step * lam),
                step=1.0 / np.linalg.eigvalsh(M)[-1],
                x0=x0,
                residual=lambda x: l1_residual(Q.gradient(x), x, lam),
                tol=1e-9,
                max_iter=20000,
            )
            restarts = list(result.restart_objectives)
            self.assertTrue(all(b <= a + 1e-12 * (1.0 + abs(a)) for a, b in zip(restarts, restarts[1:])))
            if restarts:
                self.assertLessEqual(restarts[0], objective(x0))
                self.assertLessEqual(objective(result.x), restarts[-1] + 1e-12 * (1.0 + abs(restarts[-1])))

    def test_ill_conditioned_lasso_reaches_tight_tolerance_without_polish(self):
        rng = np.random.default_rng(12)
        U, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        M = U @ np.diag(np.logspace(-2, 2, 6)) @ U.T
        M = 0.5 * (M + M.T)
        Q = QuadraticTerm(M=M, linear=rng.standard_normal(6))
        lam = 0.05
        result = accelerated_proximal_gradient(
            objective=lambda x: Q.value(x) + lam * float(np.abs(x).sum()),
            gradient=Q.gradient,
            prox=lambda v, step: soft_threshold(v, step * lam),
            step=1.0 / np.linalg.eigvalsh(M)[-1],
            x0=20.0 * np.ones(6),
            residual=lambda x: l1_residual(Q.gradient(x), x, lam),
            tol=1e-9,
            max_iter=20000,
        )
        self.assertFalse(result.polished)
        self.assertLessEqual(result.residual, 1e-9)
        self.assertLess(result.inner_iterations, 20000)


class NonsmoothSolveTests(TestCase):
    def test_one_dimensional_example(self):
        obj = LocalObjective(ObjectiveKind.L1_LASSO, A=[[1.0]], b=[2.0], lam=0.0)
        result = solve_nonsmooth(1.0, np.zeros(1), obj, tol=TOL)
        np.testing.assert_allclose(result.x, [1.0], atol=1e-12)

    def test_dominant_regularizer_gives_zero(self):
        rng = np.random.default_rng(10)
        obj = random_l1_objective(rng, lam=1e6)
        result = solve_nonsmooth(1.0, rng.standard_normal(3), obj, tol=TOL)
        np.testing.assert_allclose(result.x, np.zeros(3), atol=1e-12)

    def test_matches_grid_search_in_one_dimension(self):
        rng = np.random.default_rng(11)
        grid = np.linspace(-20.0, 20.0, 400001)
        for _ in range(20):
            obj = random_l1_objective(rng, d=1, m=4)
            beta = rng.uniform(0.5, 5.0)
            linear = rng.standard_normal(1)
            result = solve_nonsmooth(beta, linear, obj, tol=TOL)
            values = (
                0.5 * beta * grid ** 2
                + linear[0] * grid
                + np.abs(np.outer(grid, obj.A[:, 0]) - obj.b).mean(axis=1)
                + obj.lam * np.abs(grid)
            )
            self.assertLessEqual(abs(result.x[0] - grid[np.argmin(values)]), 1e-3)

    def test_random_subproblems_certified(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            obj = random_l1_objective(rng)
            beta = rng.uniform(0.1, 10.0)
            linear = 2.0 * rng.standard_normal(3)
            result = solve_nonsmooth(beta, linear, obj, tol=TOL, max_inner=5000)
            self.assertLessEqual(nonsmooth_residual(beta, linear, obj, result.x), 10 * TOL)

    def test_two_starts_agree(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            obj = random_l1_objective(rng)
            linear = rng.standard_normal(3)
            first = solve_nonsmooth(1.0, linear, obj, tol=TOL)
            second = solve_nonsmooth(1.0, linear, obj, tol=TOL, x0=5.0 * rng.standard_normal(3))
            self.assertLessEqual(np.linalg.norm(first.x - second.x), 10 * TOL)

    def test_solution_beats_perturbations(self):
        rng = np.random.default_rng(14)
        obj = random_l1_objective(rng)
        beta, linear = 2.0, rng.standard_normal(3)

        def value(x):
            return 0.5 * beta * x @ x + linear @ x + nonsmooth_value(obj, x)

        x = solve_nonsmooth(beta, linear, obj, tol=TOL).x
        for _ in range(50):
            self.assertLessEqual(value(x), value(x + 1e-3 * rng.standard_normal(3)))

    def test_wrong_kind_rejected(self):
        obj = LocalObjective(ObjectiveKind.LEAST_SQUARES_LASSO, A=[[1.0]], b=[1.0])
        with self.assertRaises(ParameterError):
            solve_nonsmooth(1.0, np.zeros(1), obj)

    def test_nonpositive_beta_rejected(self):
        obj = LocalObjective(ObjectiveKind.L1_LASSO, A=[[1.0]], b=[1.0])
        with self.assertRaises(ParameterError):
            solve_nonsmooth(0.0, np.zeros(1), obj)


class ResidualTests(TestCase):
    def test_l1_residual_zero_at_optimum(self):
        # min 1/2 (x - 2)^2 + 0.5|x| at x = 1.5
        self.assertEqual(l1_residual(np.array([-0.5]), np.array([1.5]), 0.5), 0.0)

    def test_l1_residual_at_zero_uses_box(self):
        self.assertEqual(l1_residual(np.array([0.3]), np.zeros(1), 1.0), 0.0)
        self.assertAlmostEqual(l1_residual(np.array([1.5]), np.zeros(1), 1.0), 0.5)

    def test_polyhedral_residual_at_kink(self):
        K, shift, weights = np.eye(1), np.array([2.0]), np.array([1.0])
        self.assertAlmostEqual(polyhedral_residual(np.array([0.5]), np.array([2.0]), K, shift, weights), 0.0)
        self.assertAlmostEqual(polyhedral_residual(np.array([1.5]), np.array([2.0]), K, shift, weights), 0.5)
