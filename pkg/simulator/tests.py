import os
import tempfile
from pathlib import Path
from unittest import TestCase, mock

import numpy as np

from engine.models import MetricRow

from .exceptions import ConfigError
from .reports import read_csv, write_csv
from .seeding import derive_rng, derive_seed
from .settings import Settings, load_settings


def write_yaml(directory: str, text: str) -> Path:
    path = Path(directory) / "config.yaml"
    path.write_text(text, encoding="utf-8")
    return path


class SettingsTests(TestCase):
    def test_defaults(self):
        with mock.patch.dict(os.environ, {}, clear=False):
            os.environ.pop("AMM_CONFIG", None)
            os.environ.pop("AMM_OUT_DIR", None)
            settings = load_settings()
        self.assertEqual(settings.topology.node_count, 10)
        self.assertEqual(settings.topology.edge_count, 30)
        self.assertEqual(settings.problem.total_samples, 100)
        self.assertEqual(settings.policy.baseline_action, (5.0, 5.0, 5.0))
        self.assertEqual(settings.baseline_iterations, 110)
        self.assertEqual(settings.io.out_dir, Path("artifacts"))

    def test_yaml_values_and_alias(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_yaml(tmp, "seed: 7\nproblem:\n  kind: logistic\n  lambda: 0.5\nppo:\n  updates: 3\n")
            settings = load_settings(path)
        self.assertEqual(settings.seed, 7)
        self.assertEqual(settings.problem.lam, 0.5)
        self.assertEqual(settings.problem.kind.value, "logistic")
        self.assertEqual(settings.ppo.updates, 3)

    def test_unknown_key_is_named(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_yaml(tmp, "ppo:\n  learning_rate: 0.1\n")
            with self.assertRaises(ConfigError) as ctx:
                load_settings(path)
        self.assertIn("ppo.learning_rate", str(ctx.exception))

    def test_malformed_yaml(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_yaml(tmp, "ppo: [unclosed\n")
            with self.assertRaises(ConfigError):
                load_settings(path)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_settings(Path("/nonexistent/amm-config.yaml"))

    def test_infeasible_topology(self):
        with self.assertRaises(ConfigError):
            load_settings(overrides={"topology": {"node_count": 4, "edge_count": 2}})

    def test_actions_outside_the_box(self):
        with self.assertRaises(ConfigError):
            load_settings(overrides={"policy": {"baseline_action": [5.0, 5.0, 50.0]}})
        with self.assertRaises(ConfigError):
            load_settings(overrides={"engine": {"bounds": {"beta_max": 4.0}}})
        with self.assertRaises(ConfigError):
            load_settings(overrides={"baselines": {"fixed_rhos": [1.0, 25.0]}})

    def test_environment_fills_out_dir(self):
        with mock.patch.dict(os.environ, {"AMM_OUT_DIR": "/tmp/amm-runs"}):
            os.environ.pop("AMM_CONFIG", None)
            self.assertEqual(load_settings().io.out_dir, Path("/tmp/amm-runs"))

    def test_yaml_beats_environment_and_flags_beat_yaml(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_yaml(tmp, "seed: 4\nio:\n  out_dir: from-yaml\n")
            with mock.patch.dict(os.environ, {"AMM_OUT_DIR": "from-env"}):
                settings = load_settings(path, overrides={"seed": 9})
        self.assertEqual(settings.io.out_dir, Path("from-yaml"))
        self.assertEqual(settings.seed, 9)

    def test_explicit_baseline_iterations(self):
        settings = Settings.model_validate({"baselines": {"iterations": 42}})
        self.assertEqual(settings.baseline_iterations, 42)


class SeedingTests(TestCase):
    def test_same_keys_same_stream(self):
        a = derive_rng(3, "episodes", 1).standard_normal(5)
        b = derive_rng(3, "episodes", 1).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_keys_separate_streams(self):
        a = derive_rng(3, "episodes", 1).standard_normal(5)
        b = derive_rng(3, "episodes", 2).standard_normal(5)
        c = derive_rng(4, "episodes", 1).standard_normal(5)
        self.assertFalse(np.array_equal(a, b))
        self.assertFalse(np.array_equal(a, c))

    def test_streams_do_not_depend_on_consumption_order(self):
        first = derive_rng(0, "instance", 5)
        derive_rng(0, "instance", 4).standard_normal(100)
        np.testing.assert_array_equal(first.standard_normal(3), derive_rng(0, "instance", 5).standard_normal(3))

    def test_derived_seed_fits_torch(self):
        seed = derive_seed(2**40, "networks")
        self.assertGreaterEqual(seed, 0)
        self.assertLess(seed, 2**63)
        self.assertEqual(seed, derive_seed(2**40, "networks"))


class ReportTests(TestCase):
    def test_columns_in_declared_order(self):
        rows = [MetricRow("i0", 1, 0.5, 0.1, 0.2, 5.0, 5.0, 5.0)]
        with tempfile.TemporaryDirectory() as tmp:
            path = write_csv(rows, ("iter", "instance_id", "mse"), Path(tmp) / "out" / "m.csv")
            self.assertEqual(path.read_text().splitlines()[0], "iter,instance_id,mse")
            frame = read_csv(path)
        self.assertEqual(frame["mse"].tolist(), [0.5])

    def test_dict_rows(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_csv([{"a": 1, "b": 2}], ("b", "a"), Path(tmp) / "d.csv")
            self.assertEqual(path.read_text(), "b,a\n2,1\n")
