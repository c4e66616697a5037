from unittest import TestCase

import numpy as np

from problems.datasets import sample_instance, synthetic_pool
from problems.models import LocalObjective, ObjectiveKind, ProblemInstance
from problems.objectives import full_objective
from topology.graphs import generate_graph

from .centralized import certify, label_instance, solve_centralized, solve_reference


def small_instance(kind, seed, node_count=3, dimension=3, per_node=5, lam=0.1):
    g = generate_graph(node_count, node_count, seed=seed)
    pool = synthetic_pool(kind, size=100, dimension=dimension, seed=seed)
    return sample_instance(pool, g, total_samples=per_node * node_count, lam=lam, kind=kind, seed=seed)


def single_node(kind, A, b, lam):
    return ProblemInstance(instance_id="one", objectives=(LocalObjective(kind, A=A, b=b, lam=lam),))


class CentralizedSolveTests(TestCase):
    def test_scalar_lasso(self):
        inst = single_node(ObjectiveKind.LEAST_SQUARES_LASSO, [[1.0]], [2.0], 0.5)
        x_star, residual = solve_centralized(inst)
        np.testing.assert_allclose(x_star, [1.5], atol=1e-9)
        self.assertLessEqual(residual, 1e-9)

    def test_symmetric_logistic(self):
        a = np.array([1.0, 2.0])
        inst = single_node(ObjectiveKind.LOGISTIC, [a, -a], [1.0, 0.0], 0.1)
        x_star, residual = solve_centralized(inst)
        self.assertLessEqual(residual, 1e-9)
        cosine = x_star @ a / (np.linalg.norm(x_star) * np.linalg.norm(a))
        self.assertAlmostEqual(cosine, 1.0, places=9)

    def test_l1_matches_grid_in_one_dimension(self):
        rng = np.random.default_rng(0)
        grid = np.linspace(-10.0, 10.0, 200001)
        for _ in range(10):
            A = rng.standard_normal((5, 1))
            b = rng.standard_normal(5)
            inst = single_node(ObjectiveKind.L1_LASSO, A, b, 0.05)
            x_star, _ = solve_centralized(inst)
            values = np.abs(np.outer(grid, A[:, 0]) - b).mean(axis=1) + 0.05 * np.abs(grid)
            self.assertLessEqual(abs(x_star[0] - grid[np.argmin(values)]), 1e-3)

    def test_every_kind_certified(self):
        for kind in ObjectiveKind:
            for seed in range(5):
                inst = small_instance(kind, seed)
                x_star, residual = solve_centralized(inst)
                self.assertLessEqual(certify(inst, x_star), 1e-8, f"{kind.value} seed {seed}")
                self.assertEqual(residual, certify(inst, x_star))


class CertifyTests(TestCase):
    def test_shifted_point_is_far_from_optimal(self):
        for kind in (ObjectiveKind.LEAST_SQUARES_LASSO, ObjectiveKind.LOGISTIC):
            inst = small_instance(kind, seed=7)
            x_star, _ = solve_centralized(inst)
            self.assertGreater(certify(inst, x_star + 1.0), 1e-3)

    def test_small_perturbations_give_small_residuals(self):
        inst = small_instance(ObjectiveKind.LOGISTIC, seed=8)
        x_star, _ = solve_centralized(inst)
        rng = np.random.default_rng(1)
        for scale in (1e-6, 1e-5, 1e-4):
            residual = certify(inst, x_star + scale * rng.standard_normal(inst.dimension))
            self.assertLess(residual, 100.0 * scale)


class OracleAgreementTests(TestCase):
    def test_two_methods_agree_in_objective(self):
        for kind in ObjectiveKind:
            for seed in range(20):
                inst = small_instance(kind, seed=100 + seed)
                x_star, _ = solve_centralized(inst)
                x_ref = solve_reference(inst)
                self.assertLessEqual(
                    abs(full_objective(inst, x_star) - full_objective(inst, x_ref)), 1e-5, f"{kind.value} seed {seed}"
                )


class LabelTests(TestCase):
    def test_label_attaches_solution(self):
        inst = small_instance(ObjectiveKind.L1_LASSO, seed=3)
        labeled = label_instance(inst)
        self.assertIsNone(inst.x_star)
        self.assertEqual(labeled.x_star.shape, (inst.dimension,))
        self.assertLessEqual(labeled.kkt_residual, 1e-9)
