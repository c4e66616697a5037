"""
Training loop (warm-up, cloning, PPO updates, validation-based selection)
and deterministic evaluation.
"""
import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from tqdm import tqdm

from policy.checkpoints import Checkpoint
from policy.models import ArchitectureMeta
from policy.networks import GaussianPolicy, Mlp, StateEncoder, build_networks, compress_mask, seeded_generator
from problems.models import ProblemInstance
from simulator.exceptions import ParameterError, PretrainError
from simulator.seeding import derive_rng, derive_seed
from topology.models import WeightMatrix

from .environment import AmmEnvironment
from .models import EnvConfig, PretrainReport, RolloutBatch, Transition
from .ppo import compute_advantages, ppo_update
from .pretrain import baseline_rollouts, check_baseline, pretrain_behavior_clone

logger = logging.getLogger(__name__)

EVALUATION_COLUMNS = ("policy_id", "instance_id", "iter", "mse", "obj_err", "cons_err", "alpha", "beta", "rho")


@dataclass
class TrainingResult:
    best: Checkpoint
    initial: Checkpoint
    curves: list[dict] = field(default_factory=list)
    best_update: int = 0
    best_val_mse: float = math.inf
    pretrain: Optional[PretrainReport] = None
    baseline_descending: bool = True


def architecture_for(inst: ProblemInstance, cfg: EnvConfig, hidden_sizes=(64, 64), log_compress=True) -> ArchitectureMeta:
    return ArchitectureMeta(
        kind=cfg.kind,
        state_dim=cfg.state_dim(inst.node_count, inst.dimension),
        action_dim=cfg.action_dim,
        node_count=inst.node_count,
        dimension=inst.dimension,
        local_iterations=cfg.local_iterations,
        hidden_sizes=tuple(hidden_sizes),
        log_compress=log_compress,
    )


def _snapshot(policy, value_net, encoder, arch, seed, policy_id, **notes) -> Checkpoint:
    return Checkpoint(
        policy=copy.deepcopy(policy),
        value_net=copy.deepcopy(value_net),
        encoder=copy.deepcopy(encoder),
        architecture=arch,
        seed=seed,
        policy_id=policy_id,
        notes={k: v if not isinstance(v, float) or math.isfinite(v) else None for k, v in notes.items()},
    )


def evaluate(
    ckpt: Checkpoint,
    instances: Sequence[ProblemInstance],
    weights: WeightMatrix,
    cfg: EnvConfig,
    rounds: Optional[int] = None,
) -> list[dict]:
    """
    Mean-action rollouts for `rounds` rounds (the training horizon when
    omitted). Traces cover iterations n+1 .. n + rounds*n, after the
    state-forming round.
    """
    rounds = rounds or cfg.rounds_per_episode
    run_cfg = cfg.model_copy(update={"rounds_per_episode": rounds})
    rows = []
    for inst in instances:
        env = AmmEnvironment(inst, weights, run_cfg)
        state = env.reset(record=True)
        for _ in range(rounds):
            raw = ckpt.policy.mean_action(ckpt.encoder.encode(state))
            result = env.step(run_cfg.bounds.clip(raw, run_cfg.kind))
            state = result.state
            if result.done:
                break
        rows.extend({"policy_id": ckpt.policy_id, **row.__dict__} for row in env.rows)
    return rows


def validation_score(ckpt: Checkpoint, instances: Sequence[ProblemInstance], weights: WeightMatrix, cfg: EnvConfig) -> float:
    """Mean MSE at the last iteration of the training horizon; inf if any rollout aborted."""
    final_iter = cfg.local_iterations * (1 + cfg.rounds_per_episode)
    rows = evaluate(ckpt, instances, weights, cfg)
    finals = {r["instance_id"]: r["mse"] for r in rows if r["iter"] == final_iter}
    if len(finals) < len(instances):
        return math.inf
    return float(np.mean([finals[inst.instance_id] for inst in instances]))


def collect_rollouts(
    policy: GaussianPolicy,
    value_net: Mlp,
    encoder: StateEncoder,
    instances: Sequence[ProblemInstance],
    weights: WeightMatrix,
    cfg: EnvConfig,
    episodes: int,
    seed: int,
    update_idx: int,
) -> RolloutBatch:
    rng = derive_rng(seed, "episodes", update_idx)
    generator = seeded_generator(derive_seed(seed, "actions", update_idx))
    envs: dict[int, AmmEnvironment] = {}
    transitions = []
    for _ in range(episodes):
        k = int(rng.integers(len(instances)))
        env = envs.setdefault(k, AmmEnvironment(instances[k], weights, cfg))
        state = env.reset()
        while True:
            features = encoder.encode(state)
            raw, log_prob = policy.sample(features, generator)
            with torch.no_grad():
                value = float(value_net(features))
            result = env.step(cfg.bounds.clip(raw, cfg.kind))
            transitions.append(Transition(features.numpy().copy(), raw, result.reward, log_prob, value, result.done))
            if result.done:
                break
            state = result.state
    return RolloutBatch(transitions=transitions)


def train(
    train_set: Sequence[ProblemInstance],
    val_set: Sequence[ProblemInstance],
    weights: WeightMatrix,
    settings,
    progress: Optional[bool] = None,
) -> TrainingResult:
    if not train_set or not val_set:
        raise ParameterError("training needs labeled training and validation instances")
    seed = settings.seed
    cfg = EnvConfig.from_settings(settings, training=True)
    pol, ppo = settings.policy, settings.ppo
    arch = architecture_for(train_set[0], cfg, pol.hidden_sizes, pol.log_compress)

    policy, value_net = build_networks(
        arch.state_dim, arch.action_dim, derive_seed(seed, "networks"), pol.hidden_sizes, pol.init_log_std
    )
    encoder = StateEncoder(
        compress_mask(cfg.kind, arch.node_count, cfg.local_iterations, arch.dimension), pol.log_compress
    )

    warm = list(train_set[: pol.warmup_instances or len(train_set)])
    logger.info(f"Warm-up: {len(warm)} baseline episodes under {cfg.baseline_action.as_tuple()}")
    raw_states, round_mses = baseline_rollouts(warm, weights, cfg)
    descending = check_baseline(round_mses)
    encoder.observe(raw_states)
    encoder.normalizer.freeze()

    report = pretrain_behavior_clone(
        policy,
        cfg.bounds.to_vector(cfg.baseline_action, cfg.kind),
        encoder.encode(raw_states).numpy(),
        epochs=pol.pretrain_epochs,
        lr=pol.pretrain_lr,
        tolerance=pol.pretrain_tolerance,
        seed=derive_seed(seed, "pretrain"),
    )
    if report.epochs > 0 and not report.within_tolerance:
        raise PretrainError(
            f"cloned mean is {report.max_relative_error:.2%} away from the baseline action "
            f"(tolerance {pol.pretrain_tolerance:.0%}); no initial policy was kept"
        )

    initial = _snapshot(policy, value_net, encoder, arch, seed, "initial")
    best_score = validation_score(initial, val_set, weights, cfg)
    best = _snapshot(policy, value_net, encoder, arch, seed, "learned", update_idx=0, val_mse=best_score)
    best_update = 0
    logger.info(f"Pretrained policy validation MSE {best_score:.4e}")

    optimizer = torch.optim.Adam(list(policy.parameters()) + list(value_net.parameters()), lr=ppo.lr)
    generator = seeded_generator(derive_seed(seed, "minibatches"))
    show = settings.io.progress if progress is None else progress
    curves = []
    for u in tqdm(range(1, ppo.updates + 1), desc="ppo", disable=not show):
        batch = collect_rollouts(
            policy, value_net, encoder, train_set, weights, cfg, ppo.episodes_per_update, seed, u
        )
        batch = compute_advantages(batch, ppo.gamma, ppo.gae_lambda)
        stats = ppo_update(policy, value_net, optimizer, batch, ppo, generator)
        returns = batch.episode_returns()

        val_mse = math.nan
        if u % ppo.eval_interval == 0 or u == ppo.updates:
            val_mse = validation_score(
                _snapshot(policy, value_net, encoder, arch, seed, "learned"), val_set, weights, cfg
            )
            if val_mse < best_score:
                best_score, best_update = val_mse, u
                best = _snapshot(policy, value_net, encoder, arch, seed, "learned", update_idx=u, val_mse=val_mse)
            logger.info(f"Update {u}: mean return {np.mean(returns):.4f}, validation MSE {val_mse:.4e}")

        curves.append({
            "update_idx": u,
            "mean_return": float(np.mean(returns)) if returns else math.nan,
            "val_mse": val_mse,
            "clip_frac": stats.clip_fraction,
            "policy_loss": stats.policy_loss,
            "value_loss": stats.value_loss,
        })

    logger.info(f"Best validation MSE {best_score:.4e} at update {best_update}")
    return TrainingResult(
        best=best, initial=initial, curves=curves, best_update=best_update, best_val_mse=best_score,
        pretrain=report, baseline_descending=descending,
    )
