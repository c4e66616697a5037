"""
Baseline rollouts: checking the baseline action, gathering the states the
normalizer and the cloning step learn from, and cloning the baseline into
the policy mean.
"""
import copy
import logging
from typing import Sequence

import numpy as np
import torch

from engine.models import ActionTriple
from policy.networks import DTYPE, GaussianPolicy
from problems.models import ProblemInstance
from simulator.seeding import derive_rng
from topology.models import WeightMatrix

from .environment import AmmEnvironment
from .models import EnvConfig, PretrainReport

logger = logging.getLogger(__name__)

HOLDOUT_FRACTION = 0.2


def baseline_rollouts(
    instances: Sequence[ProblemInstance],
    weights: WeightMatrix,
    cfg: EnvConfig,
    action: ActionTriple = None,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Runs every instance for a full episode under one constant action.
    Returns the raw states (s0 .. s_{T-1} of every episode, stacked) and
    the per-round mean MSE across instances (NaN for rounds after an abort).
    """
    action = action or cfg.baseline_action
    states, curves = [], []
    for inst in instances:
        env = AmmEnvironment(inst, weights, cfg)
        state = env.reset()
        curve = np.full(cfg.rounds_per_episode, np.nan)
        for t in range(cfg.rounds_per_episode):
            states.append(state)
            result = env.step(action)
            if result.mses:
                curve[t] = result.mses[-1]
            state = result.state
            if result.done:
                break
        curves.append(curve)
    return np.stack(states), np.nanmean(np.stack(curves), axis=0) if curves else np.zeros(0)


def check_baseline(round_mses: np.ndarray) -> bool:
    """
    The baseline is usable when the log10 mean MSE trends downward over
    the rounds of an episode.
    """
    finite = np.isfinite(round_mses) & (round_mses > 0)
    if finite.sum() < 2:
        # already exact, or nothing to fit
        return bool(finite.sum() == 0 and np.all(round_mses == 0))
    rounds = np.flatnonzero(finite)
    slope = np.polyfit(rounds, np.log10(round_mses[finite]), 1)[0]
    if slope >= 0:
        logger.warning(f"Baseline action does not reduce the MSE (log-slope {slope:.3g} per round)")
    return bool(slope < 0)


def pretrain_behavior_clone(
    policy: GaussianPolicy,
    baseline: np.ndarray,
    features: np.ndarray,
    epochs: int,
    lr: float = 1e-3,
    tolerance: float = 0.05,
    seed: int = 0,
) -> PretrainReport:
    """
    Regresses the policy mean onto the constant baseline action over the
    given (encoded) states, holding out a fifth of them for the check.

    The output layer is first reset to the constant map (zero weights, bias
    at the baseline); the fit then runs with early stopping, keeping the
    parameters with the smallest held-out error. Zero epochs leave the
    policy untouched.
    """
    baseline = np.asarray(baseline, dtype=float)
    features = np.atleast_2d(np.asarray(features, dtype=float))
    order = derive_rng(seed, "pretrain_split").permutation(features.shape[0])
    n_hold = max(1, int(round(HOLDOUT_FRACTION * features.shape[0]))) if features.shape[0] > 1 else 0
    held, fit = order[:n_hold], order[n_hold:]
    if fit.size == 0:
        fit = order
    check = torch.as_tensor(features[held] if held.size else features[fit], dtype=DTYPE)

    def held_out_error() -> float:
        with torch.no_grad():
            means = policy.mean_net(check).numpy()
        return float(np.max(np.abs(means - baseline) / np.maximum(np.abs(baseline), 1.0)))

    loss_value = float("nan")
    if epochs > 0:
        head = policy.mean_net.net[-1]
        with torch.no_grad():
            head.weight.zero_()
            head.bias.copy_(torch.as_tensor(baseline, dtype=DTYPE))

        x_fit = torch.as_tensor(features[fit], dtype=DTYPE)
        target = torch.as_tensor(baseline, dtype=DTYPE).expand(len(fit), -1)
        optimizer = torch.optim.Adam(policy.mean_net.parameters(), lr=lr)
        best_rel, best_state = held_out_error(), copy.deepcopy(policy.mean_net.state_dict())
        for _ in range(epochs):
            optimizer.zero_grad()
            loss = torch.mean((policy.mean_net(x_fit) - target) ** 2)
            loss.backward()
            optimizer.step()
            loss_value = loss.item()
            rel = held_out_error()
            if rel < best_rel:
                best_rel, best_state = rel, copy.deepcopy(policy.mean_net.state_dict())
        policy.mean_net.load_state_dict(best_state)

    rel = held_out_error()
    ok = rel <= tolerance
    if epochs > 0:
        if ok:
            logger.info(f"Behavior cloning: mean action within {rel:.2%} of baseline after {epochs} epochs")
        else:
            logger.warning(f"Behavior cloning stopped {rel:.2%} away from the baseline (tolerance {tolerance:.0%})")
    return PretrainReport(epochs=epochs, final_loss=loss_value, max_relative_error=rel, within_tolerance=ok)
