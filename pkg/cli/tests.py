import json
import shutil
import tempfile
from pathlib import Path
from unittest import TestCase

import pandas as pd

from .main import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from .models import CHECKPOINT_NAME, COMPARISON_NAME, LEARNING_CURVE_NAME, MANIFEST_NAME, evaluation_name

TINY_CONFIG = """\
seed: 11
topology:
  node_count: 3
  edge_count: 3
problem:
  kind: least_squares_lasso
  dataset: synthetic
  total_samples: 12
  lambda: 0.1
  synthetic_dimension: 2
  synthetic_pool_size: 200
  splits:
    train: 3
    validation: 2
    test: 2
engine:
  local_iterations: 2
  rounds_per_episode: 2
policy:
  hidden_sizes: [8, 8]
  pretrain_epochs: 300
ppo:
  updates: 2
  episodes_per_update: 2
  eval_interval: 1
  minibatch: 4
baselines:
  fixed_alphas: [1.0]
  fixed_betas: [2.0, 5.0]
  fixed_rhos: [1.0]
  pg_extra_steps: [0.1, 0.3]
io:
  progress: false
"""


def run(*args) -> int:
    return main([str(a) for a in args])


class PipelineTests(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = Path(tempfile.mkdtemp())
        cls.config = cls.tmp / "config.yaml"
        cls.config.write_text(TINY_CONFIG, encoding="utf-8")
        cls.runs = [cls.tmp / "run-a", cls.tmp / "run-b"]
        cls.codes = []
        for out in cls.runs:
            cls.codes.append([
                run("--config", cls.config, "--out", out, "gen"),
                run("--config", cls.config, "--out", out, "train"),
                run("--config", cls.config, "--out", out, "eval", "--rounds", 3),
            ])

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)

    def test_commands_succeed(self):
        for codes in self.codes:
            self.assertEqual(codes, [EXIT_OK, EXIT_OK, EXIT_OK])

    def test_manifest_lists_every_split(self):
        manifest = json.loads((self.runs[0] / MANIFEST_NAME).read_text())
        self.assertEqual({k: len(v) for k, v in manifest["splits"].items()}, {"train": 3, "validation": 2, "test": 2})
        self.assertEqual(manifest["kind"], "least_squares_lasso")
        self.assertEqual(len(list((self.runs[0] / "instances").rglob("*.json"))), 7)

    def test_same_seed_same_artifacts(self):
        a, b = self.runs
        for name in (MANIFEST_NAME, CHECKPOINT_NAME, LEARNING_CURVE_NAME, evaluation_name(3)):
            self.assertEqual((a / name).read_bytes(), (b / name).read_bytes(), name)

    def test_prolonged_evaluation_covers_requested_rounds(self):
        frame = pd.read_csv(self.runs[0] / evaluation_name(3))
        self.assertEqual(frame.groupby("instance_id")["iter"].apply(list).tolist(), [[3, 4, 5, 6, 7, 8]] * 2)
        self.assertEqual(set(frame["policy_id"]), {"learned"})

    def test_learning_curve_has_one_row_per_update(self):
        frame = pd.read_csv(self.runs[0] / LEARNING_CURVE_NAME)
        self.assertEqual(frame["update_idx"].tolist(), [1, 2])

    def test_compare_has_every_algorithm(self):
        out = self.runs[0]
        self.assertEqual(run("--config", self.config, "--out", out, "compare"), EXIT_OK)
        frame = pd.read_csv(out / COMPARISON_NAME)
        self.assertEqual(set(frame["algorithm"]), {"learned", "initial", "baseline", "fixed", "pg_extra"})
        counts = frame.groupby(["algorithm", "instance_id"]).size()
        self.assertEqual(len(counts), 5 * 2)
        # baselines span n + T*n iterations from the zero start
        self.assertEqual(frame[frame["algorithm"] == "baseline"]["iter"].max(), 6)

    def test_oracle_check_passes(self):
        self.assertEqual(run("--config", self.config, "--out", self.runs[1], "oracle-check"), EXIT_OK)

    def test_tampered_instance_is_rejected(self):
        out = self.tmp / "tampered"
        shutil.copytree(self.runs[0], out)
        victim = next((out / "instances" / "test").glob("*.json"))
        victim.write_text(victim.read_text() + " ")
        self.assertEqual(run("--config", self.config, "--out", out, "eval"), EXIT_RUNTIME)


class ExitCodeTests(TestCase):
    def test_unknown_config_key(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.yaml"
            path.write_text("engine:\n  local_iters: 3\n", encoding="utf-8")
            self.assertEqual(run("--config", path, "gen"), EXIT_USAGE)

    def test_unknown_command(self):
        self.assertEqual(run("frobnicate"), EXIT_USAGE)

    def test_bad_flag_value(self):
        self.assertEqual(run("--seed", "-3", "gen"), EXIT_USAGE)

    def test_train_without_manifest(self):
        with tempfile.TemporaryDirectory() as tmp:
            self.assertEqual(run("--out", tmp, "train"), EXIT_RUNTIME)

    def test_missing_dataset_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "cfg.yaml"
            path.write_text(f"problem:\n  dataset: abalone\n  data_path: {tmp}/missing.data\n", encoding="utf-8")
            self.assertEqual(run("--config", path, "--out", tmp, "gen"), EXIT_RUNTIME)
