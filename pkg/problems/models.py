from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field

from simulator.exceptions import ParameterError


class ObjectiveKind(str, Enum):
    LEAST_SQUARES_LASSO = "least_squares_lasso"
    LOGISTIC = "logistic"
    L1_LASSO = "l1_lasso"

    @property
    def has_smooth_part(self) -> bool:
        return self is not ObjectiveKind.L1_LASSO

    @property
    def has_nonsmooth_part(self) -> bool:
        return self is not ObjectiveKind.LOGISTIC


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: float

    def __post_init__(self):
        a = np.asarray(self.features, dtype=float)
        if a.ndim != 1 or not np.all(np.isfinite(a)) or not np.isfinite(self.label):
            raise ParameterError("sample features and label must be finite")
        object.__setattr__(self, "features", a)


@dataclass(frozen=True)
class LocalObjective:
    """
    One node's composite objective s_i + r_i over its m_i samples.

    least_squares_lasso: s = mean 1/2 (a'x - b)^2,        r = lam |x|_1
    logistic:            s = mean logloss + lam/2 |x|^2,  r = 0
    l1_lasso:            s = 0,                           r = mean |a'x - b| + lam |x|_1
    """

    kind: ObjectiveKind
    A: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    lam: float = 0.1

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] < 1 or A.shape[0] != b.shape[0]:
            raise ParameterError(f"objective needs m >= 1 matching rows, got A{A.shape} b{b.shape}")
        if self.lam < 0:
            raise ParameterError(f"regularization weight must be nonnegative, got {self.lam}")
        if self.kind is ObjectiveKind.LOGISTIC and not np.all(np.isin(b, (0.0, 1.0))):
            raise ParameterError("logistic labels must be 0 or 1")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def dimension(self) -> int:
        return self.A.shape[1]

    @classmethod
    def from_samples(cls, kind: ObjectiveKind, samples: list[Sample], lam: float) -> "LocalObjective":
        return cls(
            kind=kind,
            A=np.stack([s.features for s in samples]),
            b=np.array([s.label for s in samples]),
            lam=lam,
        )


@dataclass(frozen=True)
class ProblemInstance:
    instance_id: str
    objectives: tuple[LocalObjective, ...]
    x_star: Optional[np.ndarray] = field(default=None, repr=False)
    kkt_residual: Optional[float] = None

    def __post_init__(self):
        if not self.objectives:
            raise ParameterError("instance needs at least one node objective")
        dims = {o.dimension for o in self.objectives}
        kinds = {o.kind for o in self.objectives}
        if len(dims) != 1 or len(kinds) != 1:
            raise ParameterError("all nodes must share dimension and objective kind")
        object.__setattr__(self, "objectives", tuple(self.objectives))
        if self.x_star is not None:
            x = np.asarray(self.x_star, dtype=float).copy()
            if x.shape != (self.dimension,):
                raise ParameterError(f"x_star has shape {x.shape}, expected ({self.dimension},)")
            x.setflags(write=False)
            object.__setattr__(self, "x_star", x)

    @property
    def dimension(self) -> int:
        return self.objectives[0].dimension

    @property
    def node_count(self) -> int:
        return len(self.objectives)

    @property
    def kind(self) -> ObjectiveKind:
        return self.objectives[0].kind

    @property
    def lam(self) -> float:
        return self.objectives[0].lam

    def with_solution(self, x_star: np.ndarray, kkt_residual: float) -> "ProblemInstance":
        return replace(self, x_star=np.asarray(x_star, dtype=float), kkt_residual=float(kkt_residual))


# ==== Serialized forms ====
class NodeBlock(BaseModel):
    features: list[list[float]]
    labels: list[float]


class InstanceDocument(BaseModel):
    format: str = "amm-instance/1"
    instance_id: str
    kind: ObjectiveKind
    lam: float = Field(ge=0)
    dimension: int = Field(gt=0)
    nodes: list[NodeBlock]
    x_star: Optional[list[float]] = None
    kkt_residual: Optional[float] = None
