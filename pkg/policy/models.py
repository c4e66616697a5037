from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from problems.models import ObjectiveKind

CHECKPOINT_FORMAT_VERSION = 1


class ArchitectureMeta(BaseModel):
    """What an environment must look like for a checkpoint to drive it."""

    model_config = ConfigDict(frozen=True)

    kind: ObjectiveKind
    state_dim: int = Field(gt=0)
    action_dim: int = Field(gt=0)
    node_count: int = Field(gt=0)
    dimension: int = Field(gt=0)
    local_iterations: int = Field(gt=0)
    hidden_sizes: tuple[int, int] = (64, 64)
    log_compress: bool = True

    def compatibility_errors(self, other: "ArchitectureMeta") -> list[str]:
        return [
            f"{name}: checkpoint has {getattr(self, name)}, environment needs {getattr(other, name)}"
            for name in ("kind", "state_dim", "action_dim", "node_count", "dimension", "local_iterations")
            if getattr(self, name) != getattr(other, name)
        ]


class TensorBlock(BaseModel):
    shape: list[int]
    # row-major
    data: list[float]


class NormalizerBlock(BaseModel):
    count: float = Field(ge=0)
    mean: list[float]
    var: list[float]
    frozen: bool = False


class CheckpointDocument(BaseModel):
    format_version: int = CHECKPOINT_FORMAT_VERSION
    policy_id: str = "policy"
    seed: int
    architecture: ArchitectureMeta
    tensors: dict[str, TensorBlock]
    normalizer: NormalizerBlock
    # free-form provenance: update index, validation score, manifest hash
    notes: dict[str, Optional[float | str]] = {}
