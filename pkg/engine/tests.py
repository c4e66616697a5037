from unittest import TestCase

import numpy as np
from pydantic import ValidationError

from problems.datasets import sample_instance, synthetic_pool
from problems.models import LocalObjective, ObjectiveKind, ProblemInstance
from simulator.exceptions import MissingSolutionError, ParameterError
from topology.graphs import generate_graph, metropolis_weights, spectral_bounds
from topology.models import Graph

from .base_model import (
    convexity_safeguard,
    flatten_observations,
    init_network,
    local_consensus,
    metrics,
    run_round,
    step,
)
from .models import ActionBounds, ActionTriple, NetworkState

ALL_KINDS = tuple(ObjectiveKind)


def tiny_instance(kind, node_count=3, dimension=2, seed=0, edges=3):
    g = generate_graph(node_count, edges, seed=seed)
    pool = synthetic_pool(kind, size=60, dimension=dimension, seed=seed)
    inst = sample_instance(pool, g, total_samples=4 * node_count, lam=0.1, kind=kind, seed=seed)
    return inst, g


def averaging_instance() -> ProblemInstance:
    # s_i = 1/2 (x - b_i)^2 with b = (0, 4); minimizer of the sum is 2
    objectives = tuple(
        LocalObjective(ObjectiveKind.LEAST_SQUARES_LASSO, A=[[1.0]], b=[b], lam=0.0) for b in (0.0, 4.0)
    )
    return ProblemInstance(instance_id="avg", objectives=objectives, x_star=np.array([2.0]))


class ActionTests(TestCase):
    def test_zero_rho_rejected(self):
        with self.assertRaises(ValidationError):
            ActionTriple(alpha=1.0, beta=1.0, rho=0.0)

    def test_negative_alpha_rejected(self):
        with self.assertRaises(ValidationError):
            ActionTriple(alpha=-1.0, beta=1.0, rho=1.0)

    def test_clip_into_box(self):
        a = ActionBounds().clip([-3.0, 0.0, 100.0], ObjectiveKind.LOGISTIC)
        self.assertEqual(a.as_tuple(), (0.0, 1e-6, 20.0))

    def test_l1_actions_have_two_entries(self):
        bounds = ActionBounds()
        a = bounds.clip([5.0, 5.0], ObjectiveKind.L1_LASSO)
        self.assertEqual(a.as_tuple(), (0.0, 5.0, 5.0))
        np.testing.assert_array_equal(bounds.to_vector(a, ObjectiveKind.L1_LASSO), [5.0, 5.0])
        with self.assertRaises(ValueError):
            bounds.clip([5.0, 5.0, 5.0], ObjectiveKind.L1_LASSO)

    def test_bounds_must_be_ordered(self):
        with self.assertRaises(ValidationError):
            ActionBounds(rho_min=5.0, rho_max=1.0)

    def test_values_outside_box_rejected(self):
        for values in ({"alpha": 100.0, "beta": 50.0, "rho": 50.0}, {"alpha": 1.0, "beta": 0.0, "rho": 1.0},
                       {"alpha": 1.0, "beta": 1.0, "rho": 1e-4}, {"alpha": 1.0, "beta": 20.5, "rho": 1.0}):
            with self.assertRaises(ValidationError):
                ActionTriple(**values)

    def test_box_corners_accepted(self):
        self.assertEqual(ActionTriple(alpha=20.0, beta=1e-6, rho=1e-3).as_tuple(), (20.0, 1e-6, 1e-3))
        self.assertEqual(ActionTriple(alpha=0.0, beta=20.0, rho=20.0).as_tuple(), (0.0, 20.0, 20.0))

    def test_bounds_only_tighten_the_box(self):
        with self.assertRaises(ValidationError):
            ActionBounds(alpha_max=50.0)
        with self.assertRaises(ValidationError):
            ActionBounds(rho_min=1e-6)
        tight = ActionBounds(beta_max=10.0, rho_min=0.1)
        self.assertTrue(tight.contains(tight.clip([30.0, 30.0, 0.0], ObjectiveKind.LOGISTIC)))


class InitTests(TestCase):
    def test_zero_start(self):
        inst, _ = tiny_instance(ObjectiveKind.LOGISTIC, node_count=10, edges=30, dimension=4)
        state = init_network(inst, seed=0)
        self.assertEqual(len(state.nodes), 10)
        self.assertEqual(state.nodes[0].x.shape, (4,))
        np.testing.assert_array_equal(state.dual_sum(), np.zeros(4))
        self.assertEqual(state.iteration, 0)

    def test_same_seed_same_start(self):
        inst, _ = tiny_instance(ObjectiveKind.L1_LASSO)
        a, b = init_network(inst, seed=5), init_network(inst, seed=5)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.q, b.q)

    def test_graph_must_match_instance(self):
        inst, g = tiny_instance(ObjectiveKind.LOGISTIC)
        np.testing.assert_array_equal(init_network(inst, g).x, init_network(inst).x)
        with self.assertRaises(ParameterError):
            init_network(inst, generate_graph(4, 4, seed=0))


class LocalConsensusTests(TestCase):
    def setUp(self):
        self.P = metropolis_weights(Graph(node_count=3, edges=frozenset({(0, 1), (1, 2)})))

    def test_path_example(self):
        x = np.array([[0.0], [3.0], [0.0]])
        np.testing.assert_allclose(local_consensus(x, self.P, 1), [2.0])

    def test_agreement_gives_zero(self):
        x = np.tile([1.5, -2.0], (3, 1))
        for i in range(3):
            np.testing.assert_allclose(local_consensus(x, self.P, i), [0.0, 0.0], atol=1e-15)

    def test_perturbation_reaches_neighbors_only(self):
        x = np.zeros((3, 1))
        bumped = x.copy()
        bumped[2] = 1.0
        np.testing.assert_array_equal(local_consensus(bumped, self.P, 0), local_consensus(x, self.P, 0))
        self.assertNotEqual(local_consensus(bumped, self.P, 1)[0], 0.0)


class StepTests(TestCase):
    def test_two_node_averaging_converges(self):
        inst = averaging_instance()
        g = Graph(node_count=2, edges=frozenset({(0, 1)}))
        P = metropolis_weights(g)
        a = ActionTriple(alpha=1.0, beta=1.0, rho=1.0)
        state = init_network(inst)
        for _ in range(2000):
            state = step(state, inst, P, a)
        self.assertLessEqual(metrics(state, inst).mse, 1e-6)

    def test_dual_sum_conserved_under_random_actions(self):
        rng = np.random.default_rng(0)
        for kind in ALL_KINDS:
            inst, g = tiny_instance(kind, node_count=4, edges=4, seed=1)
            P = metropolis_weights(g)
            lambda_max = spectral_bounds(P)[0]
            state = init_network(inst)
            for _ in range(1000):
                rho = rng.uniform(0.1, 5.0)
                a = ActionTriple(
                    alpha=rng.uniform(0.0, 5.0) if kind.has_smooth_part else 0.0,
                    beta=rho * lambda_max + rng.uniform(0.1, 5.0),
                    rho=rho,
                )
                state = step(state, inst, P, a)
                self.assertLessEqual(np.linalg.norm(state.dual_sum()), 1e-9)

    def test_node_update_ignores_non_neighbors(self):
        g = Graph(node_count=4, edges=frozenset({(0, 1), (1, 2), (2, 3)}))
        P = metropolis_weights(g)
        rng = np.random.default_rng(2)
        a = ActionTriple(alpha=1.0, beta=3.0, rho=2.0)
        for kind in ALL_KINDS:
            pool = synthetic_pool(kind, size=40, dimension=2, seed=3)
            inst = sample_instance(pool, g, total_samples=12, lam=0.1, kind=kind, seed=3)
            x, q = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
            x_far, q_far = x.copy(), q.copy()
            x_far[3] += 10.0
            q_far[3] -= 10.0
            base = step(NetworkState(x=x, q=q), inst, P, a)
            perturbed = step(NetworkState(x=x_far, q=q_far), inst, P, a)
            np.testing.assert_array_equal(base.x[0], perturbed.x[0])

    def test_fixed_point_is_stable(self):
        inst, g = tiny_instance(ObjectiveKind.LEAST_SQUARES_LASSO, seed=4)
        P = metropolis_weights(g)
        a = ActionTriple(alpha=1.0, beta=2.0, rho=1.0)
        state = init_network(inst)
        for _ in range(3000):
            state = step(state, inst, P, a)
        after = step(state, inst, P, a)
        self.assertLessEqual(np.max(np.abs(after.x - state.x)), 1e-9)

    def test_safe_fixed_action_converges_on_every_kind(self):
        from oracle.centralized import label_instance

        for kind in ALL_KINDS:
            inst, g = tiny_instance(kind, seed=5)
            inst = label_instance(inst)
            P = metropolis_weights(g)
            a = ActionTriple(alpha=1.0 if kind.has_smooth_part else 0.0, beta=2.0, rho=1.0)
            self.assertTrue(convexity_safeguard(a, 0.0, spectral_bounds(P)[0]))
            state = init_network(inst)
            for _ in range(5000):
                state = step(state, inst, P, a)
                if metrics(state, inst).mse <= 1e-6:
                    break
            self.assertLessEqual(metrics(state, inst).mse, 1e-6, kind.value)


class RoundTests(TestCase):
    def setUp(self):
        self.inst, g = tiny_instance(ObjectiveKind.LEAST_SQUARES_LASSO, seed=6)
        self.P = metropolis_weights(g)
        self.a = ActionTriple(alpha=5.0, beta=5.0, rho=5.0)

    def test_round_advances_by_n(self):
        state, observations = run_round(init_network(self.inst), self.inst, self.P, self.a, n=10)
        self.assertEqual(state.iteration, 10)
        self.assertEqual(state.round, 1)
        self.assertEqual(len(observations), 3)
        self.assertTrue(all(o.sigma.shape == (10, 2) for o in observations))

    def test_single_iteration_round_equals_step(self):
        start = init_network(self.inst)
        state, observations = run_round(start, self.inst, self.P, self.a, n=1)
        stepped = step(start, self.inst, self.P, self.a)
        np.testing.assert_array_equal(state.x, stepped.x)
        np.testing.assert_array_equal(observations[1].sigma[0], stepped.observation.sigma[1])

    def test_zero_iterations_rejected(self):
        with self.assertRaises(ParameterError):
            run_round(init_network(self.inst), self.inst, self.P, self.a, n=0)

    def test_flattened_state_dimensions(self):
        _, observations = run_round(init_network(self.inst), self.inst, self.P, self.a, n=10)
        self.assertEqual(flatten_observations(observations, ObjectiveKind.LEAST_SQUARES_LASSO).shape, (3 * 10 * 6,))
        self.assertEqual(flatten_observations(observations, ObjectiveKind.L1_LASSO).shape, (3 * 10 * 2,))

    def test_observation_of_l1_kind_has_zero_derivatives(self):
        inst, g = tiny_instance(ObjectiveKind.L1_LASSO, seed=6)
        _, observations = run_round(init_network(inst), inst, metropolis_weights(g), self.a, n=3)
        for o in observations:
            np.testing.assert_array_equal(o.grad, np.zeros((3, 2)))
            np.testing.assert_array_equal(o.eigs, np.zeros((3, 2)))


class MetricTests(TestCase):
    def test_hand_example(self):
        inst = averaging_instance()
        m = metrics(NetworkState(x=np.array([[1.0], [3.0]]), q=np.zeros((2, 1))), inst)
        self.assertAlmostEqual(m.mse, 1.0)
        self.assertAlmostEqual(m.consensus_error, 2.0)
        # (1/2 + 1/2) - (2 + 2)
        self.assertAlmostEqual(m.objective_error, 3.0)

    def test_at_solution_everything_vanishes(self):
        inst = averaging_instance()
        m = metrics(NetworkState(x=np.array([[2.0], [2.0]]), q=np.zeros((2, 1))), inst)
        self.assertEqual((m.mse, m.objective_error, m.consensus_error), (0.0, 0.0, 0.0))

    def test_missing_solution(self):
        inst, _ = tiny_instance(ObjectiveKind.LOGISTIC)
        with self.assertRaises(MissingSolutionError):
            metrics(init_network(inst), inst)


class SafeguardTests(TestCase):
    def test_examples(self):
        self.assertTrue(convexity_safeguard(ActionTriple(alpha=0.0, beta=5.0, rho=5.0), 0.3, 1.0))
        self.assertFalse(convexity_safeguard(ActionTriple(alpha=0.0, beta=0.1, rho=5.0), 0.3, 1.0))
        self.assertTrue(convexity_safeguard(ActionTriple(alpha=0.0, beta=1e-3, rho=1e-3), 0.0, 1.0))
