import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np

from simulator.exceptions import ParameterError

from .graphs import (
    generate_graph,
    load_graph,
    metropolis_weights,
    mixing_matrix,
    save_graph,
    spectral_bounds,
    symmetric_eigenvalues,
)
from .models import Graph, WeightMatrix


def path3() -> Graph:
    return Graph(node_count=3, edges=frozenset({(0, 1), (1, 2)}))


class GraphGenerationTests(TestCase):
    def test_three_nodes_two_edges_is_connected_tree(self):
        g = generate_graph(3, 2, seed=7)
        self.assertEqual(g.edge_count, 2)
        self.assertTrue(all(g.degree(i) >= 1 for i in range(3)))

    def test_full_scale_graph(self):
        g = generate_graph(10, 30, seed=0)
        self.assertEqual(g.node_count, 10)
        self.assertEqual(g.edge_count, 30)

    def test_below_spanning_tree_minimum_rejected(self):
        with self.assertRaises(ParameterError):
            generate_graph(4, 2, seed=1)

    def test_above_complete_graph_rejected(self):
        with self.assertRaises(ParameterError):
            generate_graph(4, 7, seed=1)

    def test_same_seed_same_edges(self):
        self.assertEqual(generate_graph(12, 20, seed=3).edges, generate_graph(12, 20, seed=3).edges)

    def test_disconnected_graph_rejected(self):
        with self.assertRaises(ParameterError):
            Graph(node_count=4, edges=frozenset({(0, 1), (2, 3)}))

    def test_self_loop_rejected(self):
        with self.assertRaises(ParameterError):
            Graph(node_count=2, edges=frozenset({(0, 0), (0, 1)}))

    def test_edge_list_roundtrip(self):
        g = generate_graph(6, 9, seed=2)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_graph(g, Path(tmp) / "graph.txt")
            self.assertTrue(path.read_text().startswith("6 9\n"))
            self.assertEqual(load_graph(path), g)


class MetropolisWeightTests(TestCase):
    def test_path_weights(self):
        P = metropolis_weights(path3()).P
        self.assertAlmostEqual(P[0, 1], -1 / 3)
        self.assertAlmostEqual(P[1, 2], -1 / 3)
        np.testing.assert_allclose(np.diag(P), [1 / 3, 2 / 3, 1 / 3])
        self.assertEqual(P[0, 2], 0.0)

    def test_degree_two_and_three(self):
        g = Graph(node_count=5, edges=frozenset({(0, 1), (0, 2), (1, 3), (1, 4)}))
        self.assertAlmostEqual(metropolis_weights(g).P[0, 1], -0.25)

    def test_random_graph_suite(self):
        rng = np.random.default_rng(11)
        for trial in range(50):
            N = int(rng.integers(2, 21))
            E = int(rng.integers(N - 1, N * (N - 1) // 2 + 1))
            weights = metropolis_weights(generate_graph(N, E, seed=trial))
            P = weights.P
            self.assertEqual(np.max(np.abs(P - P.T)), 0.0)
            self.assertLessEqual(np.max(np.abs(P.sum(axis=1))), 1e-12)
            eigs = symmetric_eigenvalues(P)
            self.assertGreaterEqual(eigs.min(), -1e-10)
            self.assertEqual(int(np.sum(np.abs(eigs) <= 1e-10)), 1)
            W = mixing_matrix(weights).W
            np.testing.assert_allclose(W.sum(axis=0), 1.0, atol=1e-12)
            np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)
            for i, j in weights.graph.edges:
                self.assertGreater(W[i, j], 0.0)


class SpectralBoundTests(TestCase):
    def test_path_spectrum(self):
        weights = metropolis_weights(path3())
        np.testing.assert_allclose(symmetric_eigenvalues(weights.P), [0.0, 1 / 3, 1.0], atol=1e-12)
        lam_max, lam_min = spectral_bounds(weights)
        self.assertAlmostEqual(lam_max, 1.0)
        self.assertAlmostEqual(lam_min, 1 / 3)

    def test_two_node_closed_form(self):
        g = Graph(node_count=2, edges=frozenset({(0, 1)}))
        # Metropolis on K2 uses 1/(1+1)
        self.assertAlmostEqual(spectral_bounds(metropolis_weights(g))[0], 1.0)
        custom = WeightMatrix(graph=g, P=np.array([[1 / 3, -1 / 3], [-1 / 3, 1 / 3]]))
        self.assertAlmostEqual(spectral_bounds(custom)[0], 2 / 3)

    def test_consensus_vector_in_null_space(self):
        weights = metropolis_weights(generate_graph(8, 12, seed=5))
        np.testing.assert_allclose(weights.P @ np.ones(8), 0.0, atol=1e-12)
        self.assertLessEqual(spectral_bounds(weights)[0], 2.0)
