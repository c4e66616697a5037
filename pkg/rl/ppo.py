"""
Advantage estimation and the clipped-surrogate update.
"""
import copy
import logging

import numpy as np
import torch
from torch.nn import functional as F

from policy.networks import DTYPE, GaussianPolicy, Mlp
from simulator.exceptions import ParameterError

from .models import RolloutBatch, UpdateStats

logger = logging.getLogger(__name__)


def compute_advantages(batch: RolloutBatch, gamma: float, gae_lambda: float) -> RolloutBatch:
    """
    Lambda-weighted TD recursion, run backwards; a done flag cuts the
    bootstrap so episodes never leak into each other.
    """
    transitions = batch.transitions
    if not transitions:
        return RolloutBatch(transitions=[], advantages=np.zeros(0), returns=np.zeros(0))
    if not transitions[-1].done:
        raise ParameterError("rollout batch must end on a terminated episode")

    advantages = np.zeros(len(transitions))
    last = 0.0
    next_value = 0.0
    for t in reversed(range(len(transitions))):
        tr = transitions[t]
        if tr.done:
            next_value, last = 0.0, 0.0
        delta = tr.reward + gamma * next_value - tr.value
        last = delta + gamma * gae_lambda * last
        advantages[t] = last
        next_value = tr.value
    values = np.array([tr.value for tr in transitions])
    if not np.all(np.isfinite(advantages)):
        raise ParameterError("non-finite advantages")
    return RolloutBatch(transitions=transitions, advantages=advantages, returns=advantages + values)


def clipped_surrogate(ratio: torch.Tensor, advantages: torch.Tensor, clip_eps: float) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-sample (clipped, unclipped) surrogate terms; clipped <= unclipped."""
    unclipped = ratio * advantages
    clipped = torch.min(unclipped, torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages)
    return clipped, unclipped


def _normalized(advantages: np.ndarray) -> np.ndarray:
    centered = advantages - advantages.mean()
    std = advantages.std()
    return centered / std if std > 1e-12 else centered


def ppo_update(
    policy: GaussianPolicy,
    value_net: Mlp,
    optimizer: torch.optim.Optimizer,
    batch: RolloutBatch,
    settings,
    generator: torch.Generator,
) -> UpdateStats:
    """
    `settings` is the ppo section (clip_eps, epochs, minibatch, value_coef,
    entropy_coef, max_grad_norm). On a non-finite loss the networks and the
    optimizer are restored to their state before the update.
    """
    if batch.advantages is None or batch.returns is None:
        raise ParameterError("compute advantages before updating")
    size = len(batch)
    if size == 0:
        return UpdateStats()

    states = torch.as_tensor(np.stack([t.features for t in batch.transitions]), dtype=DTYPE)
    actions = torch.as_tensor(np.stack([t.action for t in batch.transitions]), dtype=DTYPE)
    old_log_probs = torch.as_tensor([t.log_prob for t in batch.transitions], dtype=DTYPE)
    advantages = torch.as_tensor(_normalized(batch.advantages), dtype=DTYPE)
    returns = torch.as_tensor(batch.returns, dtype=DTYPE)

    snapshot = (
        copy.deepcopy(policy.state_dict()),
        copy.deepcopy(value_net.state_dict()),
        copy.deepcopy(optimizer.state_dict()),
    )
    params = list(policy.parameters()) + list(value_net.parameters())

    ratios, clipped_flags = [], []
    policy_losses, value_losses, entropies = [], [], []
    first_deviation = None
    for _ in range(settings.epochs):
        order = torch.randperm(size, generator=generator)
        for start in range(0, size, settings.minibatch):
            idx = order[start:start + settings.minibatch]
            log_probs = policy.log_prob(states[idx], actions[idx])
            ratio = torch.exp(log_probs - old_log_probs[idx])
            if first_deviation is None:
                first_deviation = float(torch.max(torch.abs(ratio - 1.0)))

            clipped, _ = clipped_surrogate(ratio, advantages[idx], settings.clip_eps)
            policy_loss = -clipped.mean()
            value_loss = F.mse_loss(value_net(states[idx]).squeeze(-1), returns[idx])
            entropy = policy.entropy(states[idx]).mean()
            loss = policy_loss + settings.value_coef * value_loss - settings.entropy_coef * entropy

            if not torch.isfinite(loss):
                logger.error("Non-finite PPO loss; restoring pre-update parameters")
                policy.load_state_dict(snapshot[0])
                value_net.load_state_dict(snapshot[1])
                optimizer.load_state_dict(snapshot[2])
                return UpdateStats(aborted=True)

            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, settings.max_grad_norm)
            optimizer.step()

            detached = ratio.detach()
            ratios.append(detached)
            clipped_flags.append((torch.abs(detached - 1.0) > settings.clip_eps).to(DTYPE))
            policy_losses.append(float(policy_loss))
            value_losses.append(float(value_loss))
            entropies.append(float(entropy))

    all_ratios = torch.cat(ratios)
    return UpdateStats(
        mean_ratio=float(all_ratios.mean()),
        clip_fraction=float(torch.cat(clipped_flags).mean()),
        first_ratio_deviation=first_deviation or 0.0,
        policy_loss=float(np.mean(policy_losses)),
        value_loss=float(np.mean(value_losses)),
        entropy=float(np.mean(entropies)),
    )
