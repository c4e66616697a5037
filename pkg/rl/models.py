from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from engine.models import ActionBounds, ActionTriple, SolverOptions
from problems.models import ObjectiveKind

LEARNING_CURVE_COLUMNS = ("update_idx", "mean_return", "val_mse", "clip_frac", "policy_loss", "value_loss")


class EnvConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ObjectiveKind
    rounds_per_episode: int = Field(10, ge=1)
    local_iterations: int = Field(10, ge=1)
    bounds: ActionBounds = ActionBounds()
    baseline_action: ActionTriple = ActionTriple(alpha=5.0, beta=5.0, rho=5.0)
    abort_mse: float = Field(1e6, gt=0)
    abort_penalty: float = Field(100.0, ge=0)
    reward_mode: Literal["log", "linear"] = "log"
    reward_scale: float = Field(10.0, gt=0)
    subproblem_tol: float = Field(1e-10, gt=0)
    max_inner: int = Field(5000, ge=1)

    @classmethod
    def from_settings(cls, settings, training: bool = True) -> "EnvConfig":
        eng = settings.engine
        alpha, beta, rho = settings.policy.baseline_action
        kind = settings.problem.kind
        return cls(
            kind=kind,
            rounds_per_episode=eng.rounds_per_episode,
            local_iterations=eng.local_iterations,
            bounds=eng.bounds,
            baseline_action=ActionTriple(alpha=alpha if kind.has_smooth_part else 0.0, beta=beta, rho=rho),
            abort_mse=eng.abort_mse,
            abort_penalty=eng.abort_penalty,
            reward_mode=eng.reward_mode,
            reward_scale=eng.reward_scale,
            subproblem_tol=eng.train_subproblem_tol if training else eng.subproblem_tol,
            max_inner=eng.max_inner,
        )

    @property
    def solver_options(self) -> SolverOptions:
        return SolverOptions(tol=self.subproblem_tol, max_inner=self.max_inner)

    @property
    def action_dim(self) -> int:
        return self.bounds.action_dim(self.kind)

    def state_dim(self, node_count: int, dimension: int) -> int:
        per_iteration = 3 * dimension if self.kind.has_smooth_part else dimension
        return node_count * self.local_iterations * per_iteration


@dataclass
class StepResult:
    state: np.ndarray
    reward: float
    done: bool
    aborted: bool = False
    # MSE after each of the round's iterations
    mses: list[float] = field(default_factory=list)


@dataclass
class Transition:
    features: np.ndarray
    action: np.ndarray
    reward: float
    log_prob: float
    value: float
    done: bool


@dataclass
class RolloutBatch:
    transitions: list[Transition]
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.transitions)

    def episode_returns(self) -> list[float]:
        returns, running = [], 0.0
        for t in self.transitions:
            running += t.reward
            if t.done:
                returns.append(running)
                running = 0.0
        return returns


@dataclass
class UpdateStats:
    mean_ratio: float = 1.0
    clip_fraction: float = 0.0
    first_ratio_deviation: float = 0.0
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    aborted: bool = False


@dataclass
class PretrainReport:
    epochs: int
    final_loss: float
    max_relative_error: float
    within_tolerance: bool
