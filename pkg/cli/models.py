from pydantic import BaseModel, Field

from problems.models import ObjectiveKind

MANIFEST_NAME = "manifest.json"
GRAPH_NAME = "graph.txt"
CHECKPOINT_NAME = "checkpoint.json"
INITIAL_CHECKPOINT_NAME = "checkpoint_initial.json"
LEARNING_CURVE_NAME = "learning_curve.csv"
EVALUATION_NAME = "eval.csv"
COMPARISON_NAME = "compare.csv"
ORACLE_CHECK_NAME = "oracle_check.csv"

SPLITS = ("train", "validation", "test")

ORACLE_CHECK_COLUMNS = ("split", "instance_id", "kkt_residual", "objective_gap", "ok")


class FileEntry(BaseModel):
    # relative to the output directory
    path: str
    sha256: str = Field(min_length=64, max_length=64)


class InstanceEntry(FileEntry):
    instance_id: str


class ManifestDocument(BaseModel):
    format: str = "amm-manifest/1"
    seed: int
    kind: ObjectiveKind
    dataset: str
    node_count: int
    dimension: int
    graph: FileEntry
    splits: dict[str, list[InstanceEntry]]


def evaluation_name(rounds=None) -> str:
    return EVALUATION_NAME if rounds is None else f"eval_r{rounds}.csv"
