import math
from unittest import TestCase

import numpy as np

from engine.models import ActionTriple
from oracle.centralized import label_instance
from problems.datasets import sample_instance, synthetic_pool
from problems.models import LocalObjective, ObjectiveKind, ProblemInstance
from rl.environment import AmmEnvironment
from rl.models import EnvConfig
from simulator.exceptions import ParameterError
from topology.graphs import generate_graph, metropolis_weights, mixing_matrix
from topology.models import Graph

from .fixed_policy import action_grid, run_fixed_policy, tune_fixed_policy
from .pg_extra import local_prox, run_pg_extra, tune_pg_extra


def averaging_problem():
    objectives = tuple(
        LocalObjective(ObjectiveKind.LEAST_SQUARES_LASSO, A=[[1.0]], b=[b], lam=0.0) for b in (0.0, 4.0)
    )
    inst = ProblemInstance(instance_id="avg", objectives=objectives, x_star=np.array([2.0]))
    return inst, metropolis_weights(Graph(node_count=2, edges=frozenset({(0, 1)})))


def labeled(kind, seed=0, count=1):
    g = generate_graph(3, 3, seed=seed)
    pool = synthetic_pool(kind, size=60, dimension=2, seed=seed)
    instances = [
        label_instance(sample_instance(pool, g, total_samples=12, lam=0.1, kind=kind, seed=seed + k,
                                       instance_id=f"{kind.value}-{k}"))
        for k in range(count)
    ]
    return instances, metropolis_weights(g)


SAFE = ActionTriple(alpha=1.0, beta=2.0, rho=1.0)


class FixedPolicyTests(TestCase):
    def test_safe_action_converges(self):
        inst, P = averaging_problem()
        trace = run_fixed_policy(inst, P, SAFE, iterations=5000)
        self.assertFalse(trace.diverged)
        self.assertLessEqual(trace.final_mse, 1e-6)
        self.assertEqual([r.iter for r in trace.rows[:3]], [1, 2, 3])
        self.assertTrue(all(r.algorithm == "fixed" for r in trace.rows))

    def test_traces_are_deterministic(self):
        instances, P = labeled(ObjectiveKind.LOGISTIC)
        first = run_fixed_policy(instances[0], P, SAFE, iterations=50)
        second = run_fixed_policy(instances[0], P, SAFE, iterations=50)
        self.assertEqual(first.rows, second.rows)

    def test_matches_environment_rows(self):
        instances, P = labeled(ObjectiveKind.LEAST_SQUARES_LASSO)
        a = ActionTriple(alpha=2.0, beta=4.0, rho=3.0)
        cfg = EnvConfig(kind=ObjectiveKind.LEAST_SQUARES_LASSO, rounds_per_episode=2, local_iterations=3,
                        baseline_action=a)
        env = AmmEnvironment(instances[0], P, cfg)
        env.reset(record=True)
        env.step(a)
        env.step(a)
        trace = run_fixed_policy(instances[0], P, a, iterations=9)
        for env_row, row in zip(env.rows, trace.rows[3:]):
            self.assertEqual(
                (env_row.iter, env_row.mse, env_row.obj_err, env_row.cons_err),
                (row.iter, row.mse, row.obj_err, row.cons_err),
            )
        self.assertEqual(len(env.rows), 6)

    def test_zero_iterations_rejected(self):
        inst, P = averaging_problem()
        with self.assertRaises(ParameterError):
            run_fixed_policy(inst, P, SAFE, iterations=0)


class TuneFixedPolicyTests(TestCase):
    def setUp(self):
        self.instances, self.P = labeled(ObjectiveKind.LEAST_SQUARES_LASSO, count=2)

    def test_singleton_grid(self):
        self.assertEqual(tune_fixed_policy(self.instances, self.P, [SAFE], iterations=5), SAFE)

    def test_ties_go_to_first_point(self):
        self.assertEqual(tune_fixed_policy(self.instances, self.P, [SAFE, SAFE], iterations=5), SAFE)
        other = ActionTriple(alpha=1.0, beta=2.0, rho=1.0)
        self.assertIs(tune_fixed_policy(self.instances, self.P, [SAFE, other], iterations=5), SAFE)

    def test_convergent_action_beats_divergent(self):
        # rho far above beta breaks the convexity of the local update
        divergent = ActionTriple(alpha=0.0, beta=1e-6, rho=20.0)
        best = tune_fixed_policy(self.instances, self.P, [divergent, SAFE], iterations=200)
        self.assertEqual(best, SAFE)

    def test_empty_grid_rejected(self):
        with self.assertRaises(ParameterError):
            tune_fixed_policy(self.instances, self.P, [], iterations=5)

    def test_grid_collapses_alpha_for_l1(self):
        grid = action_grid([0.0, 1.0], [1.0, 2.0], [1.0], ObjectiveKind.L1_LASSO)
        self.assertEqual([a.as_tuple() for a in grid], [(0.0, 1.0, 1.0), (0.0, 2.0, 1.0)])
        self.assertEqual(len(action_grid([0.0, 1.0], [1.0, 2.0], [1.0], ObjectiveKind.LOGISTIC)), 4)


class PgExtraTests(TestCase):
    def test_two_node_averaging(self):
        inst, P = averaging_problem()
        trace = run_pg_extra(inst, P, step_size=0.5, iterations=500)
        self.assertFalse(trace.diverged)
        self.assertLessEqual(trace.final_mse, 1e-12)
        self.assertTrue(all(r.algorithm == "pg_extra" and r.step == 0.5 for r in trace.rows))
        self.assertTrue(math.isnan(trace.rows[0].alpha))

    def test_without_regularizer_reduces_to_extra(self):
        inst, P = averaging_problem()
        W = mixing_matrix(P).W
        W_tilde = 0.5 * (np.eye(2) + W)
        b = np.array([[0.0], [4.0]])
        step = 0.3

        def grad(x):
            return x - b

        x_prev = np.zeros((2, 1))
        x = W @ x_prev - step * grad(x_prev)
        expected = [x]
        for _ in range(9):
            x, x_prev = (W + np.eye(2)) @ x - W_tilde @ x_prev - step * (grad(x) - grad(x_prev)), x
            expected.append(x)

        trace = run_pg_extra(inst, P, step_size=step, iterations=10)
        for row, x in zip(trace.rows, expected):
            self.assertAlmostEqual(row.mse, float(np.mean((x[:, 0] - 2.0) ** 2)), places=12)

    def test_oversized_step_diverges(self):
        inst, P = averaging_problem()
        trace = run_pg_extra(inst, P, step_size=100.0, iterations=500)
        self.assertTrue(trace.diverged)
        self.assertEqual(trace.final_mse, math.inf)

    def test_tuned_smooth_run_reaches_consensus(self):
        instances, P = labeled(ObjectiveKind.LOGISTIC, seed=2, count=2)
        step = tune_pg_extra(instances, P, [0.1, 0.3, 1.0], iterations=200)
        trace = run_pg_extra(instances[0], P, step, iterations=3000)
        self.assertFalse(trace.diverged)
        self.assertLessEqual(trace.rows[-1].cons_err, 1e-10)

    def test_every_kind_produces_a_trace(self):
        for kind in ObjectiveKind:
            instances, P = labeled(kind, seed=3)
            trace = run_pg_extra(instances[0], P, 0.1, iterations=20)
            self.assertEqual(len(trace.rows), 20, kind.value)

    def test_lasso_prox_is_soft_threshold(self):
        obj = LocalObjective(ObjectiveKind.LEAST_SQUARES_LASSO, A=[[1.0]], b=[0.0], lam=2.0)
        np.testing.assert_allclose(local_prox(obj, np.array([3.0]), 0.5), [2.0])

    def test_l1_prox_is_certified_minimizer(self):
        obj = LocalObjective(ObjectiveKind.L1_LASSO, A=[[1.0]], b=[2.0], lam=0.0)
        # argmin |x - 2| + (x - y)^2 / (2 * 0.5) with y = 0 is x = 0.5
        np.testing.assert_allclose(local_prox(obj, np.array([0.0]), 0.5), [0.5], atol=1e-10)

    def test_bad_step_rejected(self):
        inst, P = averaging_problem()
        with self.assertRaises(ParameterError):
            run_pg_extra(inst, P, step_size=0.0, iterations=10)
