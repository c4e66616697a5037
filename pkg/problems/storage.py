import json
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import ValidationError

from simulator.exceptions import DatasetError

from .models import InstanceDocument, LocalObjective, NodeBlock, ProblemInstance


def to_document(inst: ProblemInstance) -> InstanceDocument:
    return InstanceDocument(
        instance_id=inst.instance_id,
        kind=inst.kind,
        lam=inst.lam,
        dimension=inst.dimension,
        nodes=[NodeBlock(features=o.A.tolist(), labels=o.b.tolist()) for o in inst.objectives],
        x_star=None if inst.x_star is None else inst.x_star.tolist(),
        kkt_residual=inst.kkt_residual,
    )


def from_document(doc: InstanceDocument) -> ProblemInstance:
    objectives = tuple(
        LocalObjective(kind=doc.kind, A=np.array(node.features, dtype=float).reshape(-1, doc.dimension),
                       b=np.array(node.labels, dtype=float), lam=doc.lam)
        for node in doc.nodes
    )
    return ProblemInstance(
        instance_id=doc.instance_id,
        objectives=objectives,
        x_star=None if doc.x_star is None else np.array(doc.x_star, dtype=float),
        kkt_residual=doc.kkt_residual,
    )


def save_instance(inst: ProblemInstance, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_document(inst).model_dump(mode="json"), indent=1) + "\n", encoding="utf-8")
    return path


def load_instance(path: Union[str, Path]) -> ProblemInstance:
    path = Path(path)
    try:
        doc = InstanceDocument.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise DatasetError(f"cannot read instance file {path}: {e}") from e
    except ValidationError as e:
        raise DatasetError(f"malformed instance file {path}: {e.error_count()} errors") from e
    return from_document(doc)
