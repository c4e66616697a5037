"""
Dataset ingestion (UCI abalone / breast cancer Wisconsin), synthetic pools and
instance sampling.
"""
import logging
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import expit

from simulator.exceptions import DatasetError, ParameterError
from simulator.seeding import derive_rng
from topology.models import Graph

from .models import LocalObjective, ObjectiveKind, ProblemInstance, Sample

logger = logging.getLogger(__name__)

MISSING_MARKER = "?"
ABALONE_SEXES = ("M", "F", "I")
BREAST_CANCER_CLASSES = {2: 0.0, 4: 1.0}


class DatasetKind(str, Enum):
    ABALONE = "abalone"
    BREAST_CANCER = "breast_cancer"


_EXPECTED_COLUMNS = {DatasetKind.ABALONE: 9, DatasetKind.BREAST_CANCER: 11}


def standardize(features: np.ndarray) -> np.ndarray:
    """Zero mean, unit (population) variance per column; constant columns become zero."""
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    constant = std < 1e-12
    std = np.where(constant, 1.0, std)
    out = (features - mean) / std
    out[:, constant] = 0.0
    return out


def _read_table(path: Path, kind: DatasetKind) -> pd.DataFrame:
    try:
        frame = pd.read_csv(
            path, header=None, dtype=str, keep_default_na=False, skipinitialspace=True
        )
    except FileNotFoundError as e:
        raise DatasetError(f"dataset file not found: {path}") from e
    except pd.errors.EmptyDataError as e:
        raise DatasetError(f"dataset file is empty: {path}") from e
    except (pd.errors.ParserError, OSError, UnicodeDecodeError) as e:
        logger.error(f"Could not parse dataset {path}: {e}", exc_info=True)
        raise DatasetError(f"unreadable dataset file {path}: {e}") from e

    expected = _EXPECTED_COLUMNS[kind]
    if frame.shape[1] != expected:
        raise DatasetError(
            f"{path}: expected {expected} comma-separated fields per row for {kind.value}"
        )
    frame = frame.apply(lambda col: col.str.strip())
    # short rows come back padded with empty strings (or NaN)
    short = (frame.isna() | (frame == "")).any(axis=1)
    if short.any():
        line = int(short.to_numpy().argmax()) + 1
        raise DatasetError(
            f"{path}, line {line}: expected {expected} non-empty fields for {kind.value}"
        )
    return frame


def _numeric(frame: pd.DataFrame, path: Path) -> np.ndarray:
    try:
        return frame.apply(pd.to_numeric, errors="raise").to_numpy(dtype=float)
    except (ValueError, TypeError) as e:
        raise DatasetError(f"{path}: non-numeric field where a number was expected ({e})") from e


def load_uci_dataset(path: Union[str, Path], kind: DatasetKind) -> list[Sample]:
    """
    Loads a published UCI file. Abalone: one-hot sex + 7 measurements (d=10),
    label = rings. Breast cancer: 9 cytology attributes (d=9), benign 0 /
    malignant 1, rows with missing markers dropped.
    """
    path = Path(path)
    kind = DatasetKind(kind)
    frame = _read_table(path, kind)

    if kind is DatasetKind.ABALONE:
        sex = frame[0]
        unknown = sorted(set(sex) - set(ABALONE_SEXES))
        if unknown:
            raise DatasetError(f"{path}: unknown sex codes {unknown}")
        onehot = np.stack([(sex == code).to_numpy(dtype=float) for code in ABALONE_SEXES], axis=1)
        numeric = _numeric(frame.iloc[:, 1:], path)
        features = np.hstack([onehot, numeric[:, :7]])
        labels = numeric[:, 7]
    else:
        complete = ~(frame == MISSING_MARKER).any(axis=1)
        dropped = int((~complete).sum())
        if dropped:
            logger.info(f"Dropped {dropped} rows with missing values from {path.name}")
        numeric = _numeric(frame[complete].iloc[:, 1:], path)
        features = numeric[:, :9]
        classes = numeric[:, 9].astype(int)
        bad = sorted(set(classes) - set(BREAST_CANCER_CLASSES))
        if bad:
            raise DatasetError(f"{path}: unknown class labels {bad}")
        labels = np.array([BREAST_CANCER_CLASSES[c] for c in classes])

    if features.shape[0] == 0:
        raise DatasetError(f"{path}: no usable rows")
    features = standardize(features)
    logger.info(f"Loaded {features.shape[0]} samples of dimension {features.shape[1]} from {path.name}")
    return [Sample(features=row, label=float(y)) for row, y in zip(features, labels)]


def synthetic_pool(kind: ObjectiveKind, size: int, dimension: int, seed: int) -> list[Sample]:
    """
    Linear model with noise; labels pass through a sigmoid draw for logistic.
    """
    kind = ObjectiveKind(kind)
    rng = derive_rng(seed, "synthetic", kind.value, size, dimension)
    A = rng.standard_normal((size, dimension))
    x_true = rng.standard_normal(dimension)
    x_true[rng.uniform(size=dimension) < 0.3] = 0.0
    z = A @ x_true
    if kind is ObjectiveKind.LOGISTIC:
        b = (rng.uniform(size=size) < expit(z)).astype(float)
    else:
        b = z + 0.1 * rng.standard_normal(size)
    return [Sample(features=row, label=float(y)) for row, y in zip(A, b)]


def _node_sizes(total: int, node_count: int, node_sizes: Optional[Sequence[int]]) -> list[int]:
    if node_sizes is None:
        if total % node_count != 0:
            raise ParameterError(
                f"{total} samples cannot be split evenly across {node_count} nodes"
            )
        return [total // node_count] * node_count
    sizes = list(node_sizes)
    if len(sizes) != node_count or sum(sizes) != total or min(sizes) < 1:
        raise ParameterError(f"node_sizes {sizes} must give every one of {node_count} nodes >= 1 sample and sum to {total}")
    return sizes


def sample_instance(
    pool: Sequence[Sample],
    g: Graph,
    total_samples: int,
    lam: float,
    kind: ObjectiveKind,
    seed: int,
    node_sizes: Optional[Sequence[int]] = None,
    instance_id: Optional[str] = None,
) -> ProblemInstance:
    """
    Draws total_samples pairs without replacement and deals them out to the nodes.
    """
    kind = ObjectiveKind(kind)
    if total_samples > len(pool):
        raise ParameterError(f"pool holds {len(pool)} samples, {total_samples} requested")
    sizes = _node_sizes(total_samples, g.node_count, node_sizes)

    rng = derive_rng(seed, "sample_instance")
    picks = rng.choice(len(pool), size=total_samples, replace=False)
    offsets = np.cumsum([0] + sizes)
    objectives = tuple(
        LocalObjective.from_samples(kind, [pool[int(k)] for k in picks[offsets[i]:offsets[i + 1]]], lam)
        for i in range(g.node_count)
    )
    return ProblemInstance(instance_id=instance_id or f"{kind.value}-{seed}", objectives=objectives)
