"""
Checkpoint files: one JSON document holding architecture metadata, every
named tensor (shape + row-major values) and the normalizer statistics.
Python's float repr is the shortest round-trip form, so load(save(x)) is
bitwise exact.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
from pydantic import ValidationError

from simulator.exceptions import CheckpointError

from .models import CHECKPOINT_FORMAT_VERSION, ArchitectureMeta, CheckpointDocument, NormalizerBlock, TensorBlock
from .networks import DTYPE, GaussianPolicy, Mlp, Normalizer, StateEncoder, build_networks, compress_mask

logger = logging.getLogger(__name__)


@dataclass
class Checkpoint:
    policy: GaussianPolicy
    value_net: Mlp
    encoder: StateEncoder
    architecture: ArchitectureMeta
    seed: int
    policy_id: str = "policy"
    notes: dict = field(default_factory=dict)


def _tensor_blocks(prefix: str, module: torch.nn.Module) -> dict[str, TensorBlock]:
    return {
        f"{prefix}.{name}": TensorBlock(shape=list(t.shape), data=t.detach().reshape(-1).tolist())
        for name, t in module.state_dict().items()
    }


def to_document(ckpt: Checkpoint) -> CheckpointDocument:
    normalizer = ckpt.encoder.normalizer
    return CheckpointDocument(
        format_version=CHECKPOINT_FORMAT_VERSION,
        policy_id=ckpt.policy_id,
        seed=ckpt.seed,
        architecture=ckpt.architecture,
        tensors={**_tensor_blocks("policy", ckpt.policy), **_tensor_blocks("value", ckpt.value_net)},
        normalizer=NormalizerBlock(
            count=normalizer.count,
            mean=normalizer.mean.tolist(),
            var=normalizer.var.tolist(),
            frozen=normalizer.frozen,
        ),
        notes=dict(ckpt.notes),
    )


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = to_document(ckpt).model_dump(mode="json")
    path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Saved checkpoint {ckpt.policy_id} to {path}")
    return path


def _load_state(module: torch.nn.Module, prefix: str, tensors: dict[str, TensorBlock]) -> None:
    state = {}
    for name, reference in module.state_dict().items():
        block = tensors.get(f"{prefix}.{name}")
        if block is None:
            raise CheckpointError(f"checkpoint is missing tensor {prefix}.{name}")
        if tuple(block.shape) != tuple(reference.shape) or len(block.data) != reference.numel():
            raise CheckpointError(
                f"tensor {prefix}.{name} has shape {block.shape}, expected {list(reference.shape)}"
            )
        state[name] = torch.tensor(block.data, dtype=DTYPE).reshape(block.shape)
    module.load_state_dict(state)


def from_document(doc: CheckpointDocument) -> Checkpoint:
    if doc.format_version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {doc.format_version}")
    arch = doc.architecture
    policy, value_net = build_networks(arch.state_dim, arch.action_dim, seed=0, hidden_sizes=arch.hidden_sizes)
    _load_state(policy, "policy", doc.tensors)
    _load_state(value_net, "value", doc.tensors)

    normalizer = Normalizer(arch.state_dim)
    if len(doc.normalizer.mean) != arch.state_dim or len(doc.normalizer.var) != arch.state_dim:
        raise CheckpointError("normalizer statistics do not match the state dimension")
    normalizer.count = doc.normalizer.count
    normalizer.mean = np.array(doc.normalizer.mean, dtype=float)
    normalizer.var = np.array(doc.normalizer.var, dtype=float)
    normalizer.frozen = doc.normalizer.frozen
    mask = compress_mask(arch.kind, arch.node_count, arch.local_iterations, arch.dimension)
    encoder = StateEncoder(mask, use_log_compress=arch.log_compress, normalizer=normalizer)
    return Checkpoint(policy, value_net, encoder, arch, doc.seed, doc.policy_id, dict(doc.notes))


def load_checkpoint(path: Union[str, Path], expected: Optional[ArchitectureMeta] = None) -> Checkpoint:
    """
    Reads a checkpoint; with `expected` given, refuses one trained for a
    different environment shape.
    """
    path = Path(path)
    try:
        doc = CheckpointDocument.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    except ValidationError as e:
        logger.error(f"Malformed checkpoint {path}: {e}", exc_info=True)
        raise CheckpointError(f"malformed or truncated checkpoint {path}") from e

    if expected is not None:
        problems = doc.architecture.compatibility_errors(expected)
        if problems:
            raise CheckpointError(f"checkpoint {path} does not fit this environment: " + "; ".join(problems))
    return from_document(doc)
