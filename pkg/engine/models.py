from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from problems.models import ObjectiveKind


# widest action box; configured bounds may only tighten it
ALPHA_MAX = 20.0
BETA_MIN, BETA_MAX = 1e-6, 20.0
RHO_MIN, RHO_MAX = 1e-3, 20.0


class ActionTriple(BaseModel):
    """One global (alpha, beta, rho) broadcast to every node for a round."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(0.0, ge=0, le=ALPHA_MAX)
    beta: float = Field(..., ge=BETA_MIN, le=BETA_MAX)
    rho: float = Field(..., ge=RHO_MIN, le=RHO_MAX)

    def as_tuple(self) -> tuple[float, float, float]:
        return self.alpha, self.beta, self.rho


class ActionBounds(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha_max: float = Field(ALPHA_MAX, ge=0, le=ALPHA_MAX)
    beta_min: float = Field(BETA_MIN, ge=BETA_MIN, le=BETA_MAX)
    beta_max: float = Field(BETA_MAX, ge=BETA_MIN, le=BETA_MAX)
    rho_min: float = Field(RHO_MIN, ge=RHO_MIN, le=RHO_MAX)
    rho_max: float = Field(RHO_MAX, ge=RHO_MIN, le=RHO_MAX)

    @model_validator(mode="after")
    def _ordered(self) -> "ActionBounds":
        if self.beta_min > self.beta_max or self.rho_min > self.rho_max:
            raise ValueError("action bounds must satisfy min <= max")
        return self

    @staticmethod
    def action_dim(kind: ObjectiveKind) -> int:
        # no smooth part means no Hessian for alpha to scale
        return 3 if ObjectiveKind(kind).has_smooth_part else 2

    def contains(self, a: ActionTriple) -> bool:
        return (
            a.alpha <= self.alpha_max
            and self.beta_min <= a.beta <= self.beta_max
            and self.rho_min <= a.rho <= self.rho_max
        )

    def clip(self, vector: Sequence[float], kind: ObjectiveKind) -> ActionTriple:
        """Maps a raw action vector (3 entries, or (beta, rho) for l1_lasso) into the box."""
        v = np.asarray(vector, dtype=float).reshape(-1)
        if v.shape[0] != self.action_dim(kind):
            raise ValueError(f"{ObjectiveKind(kind).value} actions have {self.action_dim(kind)} entries, got {v.shape[0]}")
        if v.shape[0] == 2:
            v = np.concatenate([[0.0], v])
        v = np.nan_to_num(v, nan=0.0)
        return ActionTriple(
            alpha=float(np.clip(v[0], 0.0, self.alpha_max)),
            beta=float(np.clip(v[1], self.beta_min, self.beta_max)),
            rho=float(np.clip(v[2], self.rho_min, self.rho_max)),
        )

    def to_vector(self, a: ActionTriple, kind: ObjectiveKind) -> np.ndarray:
        full = np.array(a.as_tuple())
        return full if self.action_dim(kind) == 3 else full[1:]


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_inner: int = 5000


@dataclass(frozen=True)
class NodeState:
    x: np.ndarray
    q: np.ndarray


@dataclass(frozen=True)
class IterationObservation:
    """(sigma, grad, eigs) of every node at one iteration, each N x d."""

    sigma: np.ndarray = field(repr=False)
    grad: np.ndarray = field(repr=False)
    eigs: np.ndarray = field(repr=False)
    hessians: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class LocalObservation:
    """One node's n triples over a round, each array n x d."""

    sigma: np.ndarray = field(repr=False)
    grad: np.ndarray = field(repr=False)
    eigs: np.ndarray = field(repr=False)

    def flatten(self, kind: ObjectiveKind) -> np.ndarray:
        if not ObjectiveKind(kind).has_smooth_part:
            return self.sigma.reshape(-1)
        return np.concatenate([self.sigma, self.grad, self.eigs], axis=1).reshape(-1)


@dataclass(frozen=True)
class NetworkState:
    """
    Primal and dual iterates of all nodes, rows indexed by node id. The
    observation of the iteration that produced this state rides along.
    """

    x: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    iteration: int = 0
    round: int = 0
    observation: Optional[IterationObservation] = field(default=None, repr=False)

    @property
    def node_count(self) -> int:
        return self.x.shape[0]

    @property
    def dimension(self) -> int:
        return self.x.shape[1]

    @property
    def nodes(self) -> list[NodeState]:
        return [NodeState(x=self.x[i], q=self.q[i]) for i in range(self.node_count)]

    def dual_sum(self) -> np.ndarray:
        return self.q.sum(axis=0)


@dataclass(frozen=True)
class Metrics:
    mse: float
    objective_error: float
    consensus_error: float


@dataclass(frozen=True)
class MetricRow:
    instance_id: str
    iter: int
    mse: float
    obj_err: float
    cons_err: float
    alpha: float
    beta: float
    rho: float

    @classmethod
    def build(cls, instance_id: str, iteration: int, m: Metrics, a: ActionTriple) -> "MetricRow":
        return cls(instance_id, iteration, m.mse, m.objective_error, m.consensus_error, a.alpha, a.beta, a.rho)


METRIC_COLUMNS = ("instance_id", "iter", "mse", "obj_err", "cons_err", "alpha", "beta", "rho")
