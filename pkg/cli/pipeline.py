"""
Experiment workflow behind the commands: instance generation and labeling,
training, evaluation, the algorithm comparison and the oracle re-check.
Every step reads and writes plain files under the configured output directory.
"""
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Callable, Optional, Sequence

from tqdm import tqdm

from baselines.fixed_policy import action_grid, run_fixed_policy, tune_fixed_policy
from baselines.models import COMPARISON_COLUMNS, ComparisonRow
from baselines.pg_extra import run_pg_extra, tune_pg_extra
from engine.models import SolverOptions
from oracle.centralized import certify, label_instance, solve_centralized, solve_reference
from policy.checkpoints import load_checkpoint, save_checkpoint
from problems.datasets import DatasetKind, load_uci_dataset, sample_instance, synthetic_pool
from problems.models import ProblemInstance, Sample
from problems.objectives import full_objective
from problems.storage import load_instance, save_instance
from rl.models import LEARNING_CURVE_COLUMNS, EnvConfig
from rl.trainer import EVALUATION_COLUMNS, architecture_for, evaluate, train
from simulator.exceptions import DatasetError, SimulatorError
from simulator.reports import write_csv
from simulator.seeding import derive_seed
from topology.graphs import generate_graph, load_graph, metropolis_weights, save_graph
from topology.models import Graph, WeightMatrix

from .models import (
    CHECKPOINT_NAME,
    COMPARISON_NAME,
    GRAPH_NAME,
    INITIAL_CHECKPOINT_NAME,
    LEARNING_CURVE_NAME,
    MANIFEST_NAME,
    ORACLE_CHECK_COLUMNS,
    ORACLE_CHECK_NAME,
    SPLITS,
    FileEntry,
    InstanceEntry,
    ManifestDocument,
    evaluation_name,
)

logger = logging.getLogger(__name__)

# objective agreement required between the two centralized methods
AGREEMENT_TOL = 1e-5
# certified residual accepted when re-checking stored solutions
CERTIFY_TOL = 1e-8


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def parallel_map(fn: Callable, items: Sequence, workers: int) -> list:
    """Results in submission order whatever the worker count."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# === gen ===
def build_pool(settings) -> list[Sample]:
    problem = settings.problem
    if problem.dataset == "synthetic":
        return synthetic_pool(problem.kind, problem.synthetic_pool_size, problem.synthetic_dimension, settings.seed)
    return load_uci_dataset(problem.resolved_data_path(), DatasetKind(problem.dataset))


def _label(inst: ProblemInstance, tol: float, max_iter: int) -> tuple[Optional[ProblemInstance], Optional[str]]:
    try:
        return label_instance(inst, tol=tol, max_iter=max_iter), None
    except SimulatorError as e:
        return None, str(e)


def generate(settings) -> Path:
    """
    Graph, instance splits and their oracle labels, plus a manifest with
    SHA-256 digests of every file. Returns the manifest path.
    """
    out_dir = Path(settings.io.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed, problem = settings.seed, settings.problem

    graph = generate_graph(settings.topology.node_count, settings.topology.edge_count, seed)
    graph_path = save_graph(graph, out_dir / GRAPH_NAME)
    pool = build_pool(settings)

    counts = {"train": problem.splits.train, "validation": problem.splits.validation, "test": problem.splits.test}
    unlabeled = [
        (split, sample_instance(
            pool, graph, problem.total_samples, problem.lam, problem.kind,
            seed=derive_seed(seed, "instance", split, k),
            node_sizes=problem.node_sizes,
            instance_id=f"{split}-{k:03d}",
        ))
        for split in SPLITS
        for k in range(counts[split])
    ]
    logger.info(f"Labeling {len(unlabeled)} {problem.kind.value} instances with the centralized oracle")
    labeler = partial(_label, tol=problem.oracle_tol, max_iter=problem.oracle_max_iter)
    results = parallel_map(labeler, [inst for _, inst in unlabeled], settings.io.workers)

    failures = [f"{inst.instance_id}: {err}" for (_, inst), (_, err) in zip(unlabeled, results) if err]
    if failures:
        raise SimulatorError("oracle failed on " + "; ".join(failures))

    splits: dict[str, list[InstanceEntry]] = {split: [] for split in SPLITS}
    for (split, _), (inst, _) in tqdm(
        list(zip(unlabeled, results)), desc="writing", disable=not settings.io.progress
    ):
        path = out_dir / "instances" / split / f"{inst.instance_id}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_instance(inst, path)
        splits[split].append(InstanceEntry(
            path=path.relative_to(out_dir).as_posix(), sha256=file_digest(path), instance_id=inst.instance_id,
        ))

    manifest = ManifestDocument(
        seed=seed,
        kind=problem.kind,
        dataset=problem.dataset,
        node_count=graph.node_count,
        dimension=results[0][0].dimension,
        graph=FileEntry(path=GRAPH_NAME, sha256=file_digest(graph_path)),
        splits=splits,
    )
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest.model_dump(mode="json"), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote manifest {manifest_path} (sha256 {file_digest(manifest_path)})")
    return manifest_path


# === loading ===
class Workspace:
    """A generated output directory: manifest, graph and labeled splits."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        manifest_path = self.out_dir / MANIFEST_NAME
        try:
            self.manifest = ManifestDocument.model_validate_json(manifest_path.read_text(encoding="utf-8"))
        except OSError as e:
            raise DatasetError(f"no manifest at {manifest_path}; run `gen` first") from e
        except ValueError as e:
            raise DatasetError(f"malformed manifest {manifest_path}") from e
        self.graph: Graph = load_graph(self._verified(self.manifest.graph))
        self.weights: WeightMatrix = metropolis_weights(self.graph)
        self._splits: dict[str, list[ProblemInstance]] = {}

    def _verified(self, entry: FileEntry) -> Path:
        path = self.out_dir / entry.path
        if not path.is_file():
            raise DatasetError(f"manifest lists {path}, which does not exist")
        if file_digest(path) != entry.sha256:
            raise DatasetError(f"{path} does not match its manifest digest")
        return path

    def split(self, name: str) -> list[ProblemInstance]:
        if name not in self._splits:
            entries = self.manifest.splits.get(name, [])
            self._splits[name] = [load_instance(self._verified(e)) for e in entries]
        return self._splits[name]


def _checkpoint_path(settings, checkpoint: Optional[Path]) -> Path:
    return Path(checkpoint) if checkpoint else Path(settings.io.out_dir) / CHECKPOINT_NAME


def _load_policy(ws: Workspace, settings, path: Path):
    cfg = EnvConfig.from_settings(settings, training=False)
    test = ws.split("test")
    expected = architecture_for(test[0], cfg, settings.policy.hidden_sizes, settings.policy.log_compress)
    return load_checkpoint(path, expected=expected), cfg


# === train ===
def run_training(settings) -> Path:
    ws = Workspace(settings.io.out_dir)
    result = train(ws.split("train"), ws.split("validation"), ws.weights, settings)
    out_dir = Path(settings.io.out_dir)
    save_checkpoint(result.initial, out_dir / INITIAL_CHECKPOINT_NAME)
    write_csv(result.curves, LEARNING_CURVE_COLUMNS, out_dir / LEARNING_CURVE_NAME)
    if not result.baseline_descending:
        logger.warning("Baseline action did not reduce the MSE on the training instances")
    return save_checkpoint(result.best, out_dir / CHECKPOINT_NAME)


# === eval ===
def run_evaluation(settings, checkpoint: Optional[Path] = None, rounds: Optional[int] = None) -> Path:
    ws = Workspace(settings.io.out_dir)
    ckpt, cfg = _load_policy(ws, settings, _checkpoint_path(settings, checkpoint))
    rows = evaluate(ckpt, ws.split("test"), ws.weights, cfg, rounds=rounds)
    return write_csv(rows, EVALUATION_COLUMNS, Path(settings.io.out_dir) / evaluation_name(rounds))


# === compare ===
def _policy_rows(rows: list[dict]) -> list[ComparisonRow]:
    return [
        ComparisonRow(r["policy_id"], r["instance_id"], r["iter"], r["mse"], r["obj_err"], r["cons_err"],
                      r["alpha"], r["beta"], r["rho"])
        for r in rows
    ]


def run_comparison(settings, checkpoint: Optional[Path] = None) -> Path:
    """
    Learned and initial policies, the (5,5,5) baseline, the grid-tuned fixed
    policy and tuned PG-EXTRA on the test split, all in one CSV.
    """
    ws = Workspace(settings.io.out_dir)
    test, val = ws.split("test"), ws.split("validation")
    path = _checkpoint_path(settings, checkpoint)
    ckpt, cfg = _load_policy(ws, settings, path)
    options = SolverOptions(tol=cfg.subproblem_tol, max_inner=cfg.max_inner)
    iterations = settings.baseline_iterations
    workers = settings.io.workers

    rows = _policy_rows(evaluate(ckpt, test, ws.weights, cfg))
    initial_path = path.with_name(INITIAL_CHECKPOINT_NAME)
    if initial_path.is_file():
        initial, _ = _load_policy(ws, settings, initial_path)
        rows += _policy_rows(evaluate(initial, test, ws.weights, cfg))
    else:
        logger.warning(f"No initial policy at {initial_path}; skipping it")

    grid = action_grid(
        settings.baselines.fixed_alphas, settings.baselines.fixed_betas, settings.baselines.fixed_rhos, cfg.kind
    )
    tuned = tune_fixed_policy(val, ws.weights, grid, iterations, options)
    step = tune_pg_extra(val, ws.weights, settings.baselines.pg_extra_steps, iterations, options)

    runs = [
        ("baseline", cfg.baseline_action),
        ("fixed", tuned),
    ]
    for algorithm, a in runs:
        traces = parallel_map(
            partial(run_fixed_policy, weights=ws.weights, a=a, iterations=iterations, options=options, algorithm=algorithm),
            test, workers,
        )
        rows += [row for t in traces for row in t.rows]
    traces = parallel_map(
        partial(run_pg_extra, weights=ws.weights, step_size=step, iterations=iterations, options=options), test, workers
    )
    rows += [row for t in traces for row in t.rows]
    return write_csv(rows, COMPARISON_COLUMNS, Path(settings.io.out_dir) / COMPARISON_NAME)


# === oracle-check ===
def _check(entry: tuple[str, ProblemInstance]) -> dict:
    split, inst = entry
    residual = certify(inst, inst.x_star) if inst.x_star is not None else math.inf
    try:
        x_fresh, _ = solve_centralized(inst)
        gap = abs(full_objective(inst, x_fresh) - full_objective(inst, solve_reference(inst)))
    except SimulatorError as e:
        logger.error(f"Centralized solve failed on {inst.instance_id}: {e}", exc_info=True)
        gap = math.inf
    return {
        "split": split,
        "instance_id": inst.instance_id,
        "kkt_residual": residual,
        "objective_gap": gap,
        "ok": residual <= CERTIFY_TOL and gap <= AGREEMENT_TOL,
    }


def run_oracle_check(settings) -> tuple[Path, list[str]]:
    """Re-certifies stored solutions and cross-checks the two centralized methods."""
    ws = Workspace(settings.io.out_dir)
    entries = [(split, inst) for split in SPLITS for inst in ws.split(split)]
    rows = parallel_map(_check, entries, settings.io.workers)
    failed = [r["instance_id"] for r in rows if not r["ok"]]
    for r in rows:
        if not r["ok"]:
            logger.error(
                f"{r['split']}/{r['instance_id']}: residual {r['kkt_residual']:.2e}, objective gap {r['objective_gap']:.2e}"
            )
    path = write_csv(rows, ORACLE_CHECK_COLUMNS, Path(settings.io.out_dir) / ORACLE_CHECK_NAME)
    return path, failed
