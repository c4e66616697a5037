import math
import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np

from simulator.exceptions import DatasetError, ParameterError
from topology.graphs import generate_graph

from .datasets import DatasetKind, load_uci_dataset, sample_instance, standardize, synthetic_pool
from .models import LocalObjective, ObjectiveKind, ProblemInstance
from .objectives import full_objective, hessian_eigenvalues, nonsmooth_value, smooth_hessian, smooth_value_grad
from .storage import load_instance, save_instance

SMOOTH_KINDS = (ObjectiveKind.LEAST_SQUARES_LASSO, ObjectiveKind.LOGISTIC)


def random_objective(kind, m=6, d=3, seed=0, lam=0.1):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, d))
    b = (rng.uniform(size=m) < 0.5).astype(float) if kind is ObjectiveKind.LOGISTIC else rng.standard_normal(m)
    return LocalObjective(kind=kind, A=A, b=b, lam=lam)


class SmoothPartTests(TestCase):
    def test_logistic_at_origin(self):
        obj = LocalObjective(ObjectiveKind.LOGISTIC, A=[[1.0, 0.0]], b=[1.0], lam=0.0)
        value, grad = smooth_value_grad(obj, np.zeros(2))
        self.assertAlmostEqual(value, math.log(2))
        np.testing.assert_allclose(grad, [-0.5, 0.0])

    def test_least_squares_zero_residual(self):
        obj = LocalObjective(ObjectiveKind.LEAST_SQUARES_LASSO, A=[[1.0]], b=[2.0])
        value, grad = smooth_value_grad(obj, np.array([2.0]))
        self.assertEqual(value, 0.0)
        np.testing.assert_allclose(grad, [0.0])

    def test_least_squares_hand_arithmetic(self):
        obj = LocalObjective(ObjectiveKind.LEAST_SQUARES_LASSO, A=[[1.0, 1.0]], b=[0.0])
        value, grad = smooth_value_grad(obj, np.array([1.0, 1.0]))
        self.assertAlmostEqual(value, 2.0)
        np.testing.assert_allclose(grad, [2.0, 2.0])

    def test_l1_kind_has_no_smooth_part(self):
        obj = random_objective(ObjectiveKind.L1_LASSO)
        value, grad = smooth_value_grad(obj, np.ones(3))
        self.assertEqual(value, 0.0)
        np.testing.assert_array_equal(grad, np.zeros(3))
        np.testing.assert_array_equal(smooth_hessian(obj, np.ones(3)), np.zeros((3, 3)))

    def test_gradients_match_central_differences(self):
        rng = np.random.default_rng(1)
        eps = 1e-6
        for kind in SMOOTH_KINDS:
            obj = random_objective(kind, seed=3)
            for _ in range(10):
                x = rng.standard_normal(3)
                _, grad = smooth_value_grad(obj, x)
                fd = np.array([
                    (smooth_value_grad(obj, x + eps * e)[0] - smooth_value_grad(obj, x - eps * e)[0]) / (2 * eps)
                    for e in np.eye(3)
                ])
                self.assertLessEqual(np.linalg.norm(fd - grad) / max(np.linalg.norm(grad), 1e-8), 1e-6)

    def test_hessians_match_gradient_differences(self):
        rng = np.random.default_rng(2)
        eps = 1e-6
        for kind in SMOOTH_KINDS:
            obj = random_objective(kind, seed=4)
            for _ in range(5):
                x = rng.standard_normal(3)
                H = smooth_hessian(obj, x)
                fd = np.column_stack([
                    (smooth_value_grad(obj, x + eps * e)[1] - smooth_value_grad(obj, x - eps * e)[1]) / (2 * eps)
                    for e in np.eye(3)
                ])
                self.assertLessEqual(np.linalg.norm(fd - H) / np.linalg.norm(H), 1e-5)

    def test_convexity_along_random_segments(self):
        rng = np.random.default_rng(5)
        for kind in SMOOTH_KINDS:
            obj = random_objective(kind, seed=6)
            for _ in range(20):
                x, y, t = rng.standard_normal(3), rng.standard_normal(3), rng.uniform()
                mid = smooth_value_grad(obj, t * x + (1 - t) * y)[0]
                chord = t * smooth_value_grad(obj, x)[0] + (1 - t) * smooth_value_grad(obj, y)[0]
                self.assertLessEqual(mid, chord + 1e-9)


class HessianTests(TestCase):
    def test_least_squares_rank_one(self):
        obj = LocalObjective(ObjectiveKind.LEAST_SQUARES_LASSO, A=[[1.0, 0.0]], b=[0.0])
        np.testing.assert_allclose(smooth_hessian(obj, np.array([3.0, -1.0])), [[1.0, 0.0], [0.0, 0.0]])

    def test_logistic_at_origin(self):
        obj = LocalObjective(ObjectiveKind.LOGISTIC, A=[[2.0]], b=[1.0], lam=0.0)
        np.testing.assert_allclose(smooth_hessian(obj, np.zeros(1)), [[1.0]])

    def test_eigenvalues_sorted(self):
        np.testing.assert_allclose(hessian_eigenvalues(np.diag([3.0, 1.0])), [1.0, 3.0])
        np.testing.assert_allclose(hessian_eigenvalues(np.array([[1.0, 0.0], [0.0, 0.0]])), [0.0, 1.0])
        a = np.array([1.0, 1.0])
        np.testing.assert_allclose(hessian_eigenvalues(0.5 * (np.outer(a, a) + np.outer(a, a))), [0.0, 2.0], atol=1e-12)


class FullObjectiveTests(TestCase):
    def test_l1_single_node(self):
        obj = LocalObjective(ObjectiveKind.L1_LASSO, A=[[1.0]], b=[1.0], lam=1.0)
        inst = ProblemInstance("one", (obj,))
        self.assertAlmostEqual(full_objective(inst, np.zeros(1)), 1.0)
        self.assertAlmostEqual(nonsmooth_value(obj, np.array([2.0])), 3.0)

    def test_logistic_origin_is_n_log_two(self):
        objs = tuple(random_objective(ObjectiveKind.LOGISTIC, seed=s) for s in range(4))
        inst = ProblemInstance("logit", objs)
        self.assertAlmostEqual(full_objective(inst, np.zeros(3)), 4 * math.log(2))

    def test_mixed_dimensions_rejected(self):
        with self.assertRaises(ParameterError):
            ProblemInstance("bad", (random_objective(ObjectiveKind.LOGISTIC, d=2), random_objective(ObjectiveKind.LOGISTIC, d=3)))

    def test_logistic_labels_checked(self):
        with self.assertRaises(ParameterError):
            LocalObjective(ObjectiveKind.LOGISTIC, A=[[1.0]], b=[2.0])


ABALONE_ROWS = """M,0.455,0.365,0.095,0.514,0.2245,0.101,0.15,15
M,0.35,0.265,0.09,0.2255,0.0995,0.0485,0.07,7
F,0.53,0.42,0.135,0.677,0.2565,0.1415,0.21,9
M,0.44,0.365,0.125,0.516,0.2155,0.114,0.155,10
I,0.33,0.255,0.08,0.205,0.0895,0.0395,0.055,7
"""

BREAST_ROWS = """1000025,5,1,1,1,2,1,3,1,1,2
1002945,5,4,4,5,7,10,3,2,1,2
1015425,3,1,1,1,2,2,3,1,1,2
1016277,6,8,8,1,3,4,3,7,1,2
1017023,4,1,1,3,2,1,3,1,1,2
1017122,8,10,10,8,7,10,9,7,1,4
1057013,8,4,5,1,2,?,7,3,1,4
"""


class DatasetTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name, text):
        path = self.dir / name
        path.write_text(text)
        return path

    def test_abalone_layout(self):
        samples = load_uci_dataset(self.write("abalone.data", ABALONE_ROWS), DatasetKind.ABALONE)
        self.assertEqual(len(samples), 5)
        self.assertEqual(samples[0].features.shape, (10,))
        self.assertEqual(samples[0].label, 15.0)
        features = np.stack([s.features for s in samples])
        self.assertLessEqual(np.max(np.abs(features.mean(axis=0))), 1e-9)
        self.assertLessEqual(np.max(np.abs(features.std(axis=0) - 1.0)), 1e-9)

    def test_breast_cancer_drops_missing_rows(self):
        samples = load_uci_dataset(self.write("bcw.data", BREAST_ROWS), DatasetKind.BREAST_CANCER)
        self.assertEqual(len(samples), 6)
        self.assertEqual(samples[0].features.shape, (9,))
        self.assertEqual(sorted({s.label for s in samples}), [0.0, 1.0])
        features = np.stack([s.features for s in samples])
        # column 8 (mitoses) is constant across the kept rows
        np.testing.assert_array_equal(features[:, 8], 0.0)

    def test_empty_file(self):
        with self.assertRaises(DatasetError):
            load_uci_dataset(self.write("empty.data", ""), DatasetKind.ABALONE)

    def test_missing_file(self):
        with self.assertRaises(DatasetError):
            load_uci_dataset(self.dir / "nope.data", DatasetKind.ABALONE)

    def test_short_row(self):
        path = self.write("short.data", ABALONE_ROWS + "M,0.1,0.2\n")
        with self.assertRaises(DatasetError) as ctx:
            load_uci_dataset(path, DatasetKind.ABALONE)
        self.assertIn(str(path), str(ctx.exception))
        self.assertIn("line 6", str(ctx.exception))

    def test_short_row_in_the_middle(self):
        rows = ABALONE_ROWS.splitlines()
        rows.insert(2, "F,0.5,0.4")
        path = self.write("middle.data", "\n".join(rows) + "\n")
        with self.assertRaises(DatasetError) as ctx:
            load_uci_dataset(path, DatasetKind.ABALONE)
        self.assertIn("line 3", str(ctx.exception))

    def test_non_numeric_field(self):
        with self.assertRaises(DatasetError):
            load_uci_dataset(self.write("bad.data", ABALONE_ROWS.replace("0.455", "abc")), DatasetKind.ABALONE)

    def test_standardize_constant_column(self):
        out = standardize(np.array([[1.0, 2.0], [3.0, 2.0], [5.0, 2.0]]))
        np.testing.assert_array_equal(out[:, 1], 0.0)
        self.assertAlmostEqual(out[:, 0].std(), 1.0)


class SamplingTests(TestCase):
    def setUp(self):
        self.pool = synthetic_pool(ObjectiveKind.LEAST_SQUARES_LASSO, 400, 5, seed=0)
        self.graph = generate_graph(10, 30, seed=0)

    def test_even_allocation(self):
        inst = sample_instance(self.pool, self.graph, 100, 0.1, ObjectiveKind.LEAST_SQUARES_LASSO, seed=1)
        self.assertEqual(inst.node_count, 10)
        self.assertTrue(all(o.m == 10 for o in inst.objectives))
        self.assertIsNone(inst.x_star)

    def test_deterministic(self):
        a = sample_instance(self.pool, self.graph, 100, 0.1, ObjectiveKind.LEAST_SQUARES_LASSO, seed=4)
        b = sample_instance(self.pool, self.graph, 100, 0.1, ObjectiveKind.LEAST_SQUARES_LASSO, seed=4)
        for oa, ob in zip(a.objectives, b.objectives):
            np.testing.assert_array_equal(oa.A, ob.A)
            np.testing.assert_array_equal(oa.b, ob.b)

    def test_uneven_total_rejected(self):
        with self.assertRaises(ParameterError):
            sample_instance(self.pool, self.graph, 5, 0.1, ObjectiveKind.LEAST_SQUARES_LASSO, seed=0)

    def test_custom_node_sizes(self):
        sizes = [5, 15] + [10] * 8
        inst = sample_instance(self.pool, self.graph, 100, 0.1, ObjectiveKind.LEAST_SQUARES_LASSO, seed=0, node_sizes=sizes)
        self.assertEqual([o.m for o in inst.objectives], sizes)

    def test_insufficient_pool(self):
        with self.assertRaises(ParameterError):
            sample_instance(self.pool[:50], self.graph, 100, 0.1, ObjectiveKind.LEAST_SQUARES_LASSO, seed=0)

    def test_instance_file_keeps_solution(self):
        inst = sample_instance(self.pool, self.graph, 100, 0.1, ObjectiveKind.LEAST_SQUARES_LASSO, seed=2)
        inst = inst.with_solution(np.arange(5, dtype=float) / 3, 1e-12)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = load_instance(save_instance(inst, Path(tmp) / "inst.json"))
        np.testing.assert_array_equal(loaded.x_star, inst.x_star)
        np.testing.assert_array_equal(loaded.objectives[3].A, inst.objectives[3].A)
        self.assertEqual(loaded.kind, ObjectiveKind.LEAST_SQUARES_LASSO)


class RealDatasetTests(TestCase):
    """Row counts of the published files, when they are available locally."""

    def _path(self, name):
        import os
        return Path(os.getenv("AMM_DATA_DIR", Path(__file__).resolve().parent.parent / "data")) / name

    def test_abalone_rows(self):
        path = self._path("abalone.data")
        if not path.exists():
            self.skipTest("abalone.data not downloaded")
        samples = load_uci_dataset(path, DatasetKind.ABALONE)
        self.assertEqual((len(samples), samples[0].features.size), (4177, 10))

    def test_breast_cancer_rows(self):
        path = self._path("breast-cancer-wisconsin.data")
        if not path.exists():
            self.skipTest("breast-cancer-wisconsin.data not downloaded")
        self.assertEqual(len(load_uci_dataset(path, DatasetKind.BREAST_CANCER)), 683)
