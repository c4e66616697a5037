"""
Settings for the learned-AMM simulator.

Values come from a YAML file (sections topology, problem, engine, policy,
ppo, baselines, io plus a top-level seed), with environment defaults loaded
from `.env`. Every hyperparameter the experiments never pinned down lives
here with its default.
"""
import logging
import os
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from engine.models import ActionBounds
from problems.models import ObjectiveKind
from simulator.exceptions import ConfigError

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent
load_dotenv(BASE_DIR / ".env")

DATASET_FILES = {
    "abalone": "abalone.data",
    "breast_cancer": "breast-cancer-wisconsin.data",
}

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class TopologySettings(_Section):
    node_count: int = Field(10, ge=1)
    edge_count: int = Field(30, ge=0)


class SplitSettings(_Section):
    train: int = Field(100, ge=1)
    validation: int = Field(10, ge=1)
    test: int = Field(10, ge=1)


class ProblemSettings(_Section):
    kind: ObjectiveKind = ObjectiveKind.LEAST_SQUARES_LASSO
    dataset: Literal["abalone", "breast_cancer", "synthetic"] = "abalone"
    data_path: Optional[Path] = None
    total_samples: int = Field(100, ge=1)
    lam: float = Field(0.1, ge=0, alias="lambda")
    # uneven allocation; must sum to total_samples when given
    node_sizes: Optional[list[int]] = None
    synthetic_dimension: int = Field(4, ge=1)
    synthetic_pool_size: int = Field(2000, ge=1)
    splits: SplitSettings = SplitSettings()
    oracle_tol: float = Field(1e-9, gt=0)
    oracle_max_iter: int = Field(200_000, ge=1)

    def resolved_data_path(self) -> Optional[Path]:
        if self.dataset == "synthetic":
            return None
        if self.data_path is not None:
            return self.data_path
        data_dir = Path(os.getenv("AMM_DATA_DIR", BASE_DIR / "data"))
        return data_dir / DATASET_FILES[self.dataset]


class EngineSettings(_Section):
    local_iterations: int = Field(10, ge=1)
    rounds_per_episode: int = Field(10, ge=1)
    bounds: ActionBounds = ActionBounds()
    abort_mse: float = Field(1e6, gt=0)
    abort_penalty: float = Field(100.0, ge=0)
    reward_mode: Literal["log", "linear"] = "log"
    reward_scale: float = Field(10.0, gt=0)
    subproblem_tol: float = Field(1e-10, gt=0)
    train_subproblem_tol: float = Field(1e-8, gt=0)
    max_inner: int = Field(5000, ge=1)


class PolicySettings(_Section):
    hidden_sizes: tuple[int, int] = (64, 64)
    init_log_std: float = 0.0
    log_compress: bool = True
    baseline_action: tuple[float, float, float] = (5.0, 5.0, 5.0)
    pretrain_epochs: int = Field(1000, ge=0)
    pretrain_lr: float = Field(3e-2, gt=0)
    pretrain_tolerance: float = Field(0.05, gt=0)
    # baseline episodes used for normalizer statistics and cloning states
    warmup_instances: Optional[int] = Field(None, ge=1)


class PpoSettings(_Section):
    gamma: float = Field(0.99, ge=0, le=1)
    gae_lambda: float = Field(0.95, ge=0, le=1)
    clip_eps: float = Field(0.2, gt=0)
    epochs: int = Field(4, ge=1)
    minibatch: int = Field(64, ge=1)
    lr: float = Field(3e-4, gt=0)
    entropy_coef: float = Field(1e-3, ge=0)
    value_coef: float = Field(0.5, ge=0)
    max_grad_norm: float = Field(0.5, gt=0)
    updates: int = Field(200, ge=0)
    episodes_per_update: int = Field(8, ge=1)
    eval_interval: int = Field(10, ge=1)


class BaselineSettings(_Section):
    fixed_alphas: list[float] = [0.0, 1.0, 5.0, 10.0]
    fixed_betas: list[float] = [1.0, 5.0, 10.0, 20.0]
    fixed_rhos: list[float] = [1.0, 5.0, 10.0]
    pg_extra_steps: list[float] = [0.01, 0.03, 0.1, 0.3, 1.0]
    # None -> n + T*n, the span covered by the learned policy
    iterations: Optional[int] = Field(None, ge=1)


class IoSettings(_Section):
    out_dir: Path = Path("artifacts")
    workers: int = Field(1, ge=1)
    progress: bool = True


class Settings(_Section):
    seed: int = Field(0, ge=0)
    topology: TopologySettings = TopologySettings()
    problem: ProblemSettings = ProblemSettings()
    engine: EngineSettings = EngineSettings()
    policy: PolicySettings = PolicySettings()
    ppo: PpoSettings = PpoSettings()
    baselines: BaselineSettings = BaselineSettings()
    io: IoSettings = IoSettings()

    @model_validator(mode="after")
    def _check_topology(self) -> "Settings":
        n = self.topology.node_count
        if not (n - 1 <= self.topology.edge_count <= n * (n - 1) // 2):
            raise ValueError(
                f"edge_count {self.topology.edge_count} infeasible for {n} connected nodes"
            )
        return self

    @model_validator(mode="after")
    def _check_actions(self) -> "Settings":
        b = self.engine.bounds
        ranges = {"alpha": (0.0, b.alpha_max), "beta": (b.beta_min, b.beta_max), "rho": (b.rho_min, b.rho_max)}
        for name, value in zip(ranges, self.policy.baseline_action):
            lo, hi = ranges[name]
            if not lo <= value <= hi:
                raise ValueError(f"policy.baseline_action {name}={value} outside [{lo}, {hi}]")
        grids = {"fixed_alphas": ranges["alpha"], "fixed_betas": ranges["beta"], "fixed_rhos": ranges["rho"]}
        for name, (lo, hi) in grids.items():
            outside = [v for v in getattr(self.baselines, name) if not lo <= v <= hi]
            if outside:
                raise ValueError(f"baselines.{name} values {outside} outside [{lo}, {hi}]")
        return self

    @property
    def baseline_iterations(self) -> int:
        if self.baselines.iterations is not None:
            return self.baselines.iterations
        return self.engine.local_iterations * (1 + self.engine.rounds_per_episode)


def _env_defaults(raw: dict[str, Any]) -> dict[str, Any]:
    """Fill values the YAML left out from the environment."""
    io = dict(raw.get("io") or {})
    if "out_dir" not in io and os.getenv("AMM_OUT_DIR"):
        io["out_dir"] = os.getenv("AMM_OUT_DIR")
    if io:
        raw = {**raw, "io": io}
    return raw


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        if err["type"] == "extra_forbidden":
            parts.append(f"unknown config key '{loc}'")
        else:
            parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def load_settings(path: Optional[Path] = None, overrides: Optional[dict[str, Any]] = None) -> Settings:
    """
    Reads the YAML config (or AMM_CONFIG when no path is given) and validates it.
    """
    if path is None and os.getenv("AMM_CONFIG"):
        path = Path(os.environ["AMM_CONFIG"])

    raw: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        except yaml.YAMLError as e:
            logger.error(f"Malformed config {path}: {e}", exc_info=True)
            raise ConfigError(f"malformed config file {path}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a mapping at top level")

    raw = _env_defaults(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value

    try:
        return Settings.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_describe(e)) from e


def configure_logging(level: Optional[str] = None) -> None:
    level = (level or os.getenv("AMM_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
