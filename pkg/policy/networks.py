"""
Policy and value networks plus the state encoder feeding them.

All tensors are float64 so that checkpoints round-trip bit for bit and
finite-difference gradient checks are meaningful.
"""
import logging
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from problems.models import ObjectiveKind
from simulator.exceptions import ParameterError

logger = logging.getLogger(__name__)

DTYPE = torch.float64
NORMALIZER_EPS = 1e-8
NORMALIZED_CLIP = 10.0
POLICY_HEAD_GAIN = 0.01


class Mlp(nn.Module):
    """input -> tanh(h1) -> tanh(h2) -> linear output."""

    def __init__(self, input_dim: int, output_dim: int, hidden_sizes: Sequence[int] = (64, 64)):
        super().__init__()
        self.input_dim = input_dim
        self.output_dim = output_dim
        h1, h2 = hidden_sizes
        self.net = nn.Sequential(
            nn.Linear(input_dim, h1, dtype=DTYPE),
            nn.Tanh(),
            nn.Linear(h1, h2, dtype=DTYPE),
            nn.Tanh(),
            nn.Linear(h2, output_dim, dtype=DTYPE),
        )

    def forward(self, inputs: torch.Tensor) -> torch.Tensor:
        if inputs.shape[-1] != self.input_dim:
            raise ParameterError(f"network expects inputs of size {self.input_dim}, got {inputs.shape[-1]}")
        return self.net(inputs)


class GaussianPolicy(nn.Module):
    """Diagonal Gaussian with a state-independent log standard deviation."""

    def __init__(self, state_dim: int, action_dim: int, hidden_sizes: Sequence[int] = (64, 64), init_log_std: float = 0.0):
        super().__init__()
        self.mean_net = Mlp(state_dim, action_dim, hidden_sizes)
        self.log_std = nn.Parameter(torch.full((action_dim,), float(init_log_std), dtype=DTYPE))

    @property
    def action_dim(self) -> int:
        return self.log_std.shape[0]

    def distribution(self, states: torch.Tensor) -> torch.distributions.Normal:
        return torch.distributions.Normal(self.mean_net(states), self.log_std.exp())

    def log_prob(self, states: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        """Sum over action coordinates of the Gaussian log-density (pre-clip actions)."""
        return self.distribution(states).log_prob(actions).sum(-1)

    def entropy(self, states: torch.Tensor) -> torch.Tensor:
        return self.distribution(states).entropy().sum(-1)

    @torch.no_grad()
    def mean_action(self, state: torch.Tensor) -> np.ndarray:
        return self.mean_net(state).numpy().copy()

    @torch.no_grad()
    def sample(self, state: torch.Tensor, generator: torch.Generator) -> tuple[np.ndarray, float]:
        mean = self.mean_net(state)
        noise = torch.randn(mean.shape, generator=generator, dtype=DTYPE)
        action = mean + self.log_std.exp() * noise
        return action.numpy().copy(), float(self.log_prob(state, action))


def log_compress(z: np.ndarray) -> np.ndarray:
    return np.sign(z) * np.log1p(np.abs(z))


class Normalizer:
    """
    Running per-coordinate mean and (population) variance, merged batch by
    batch with the parallel-variance formula.
    """

    def __init__(self, size: int):
        self.count = 0.0
        self.mean = np.zeros(size)
        self.var = np.ones(size)
        self.frozen = False

    @property
    def size(self) -> int:
        return self.mean.shape[0]

    def update(self, batch: np.ndarray) -> None:
        if self.frozen:
            return
        batch = np.atleast_2d(np.asarray(batch, dtype=float))
        k = batch.shape[0]
        if k == 0:
            return
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        if self.count == 0:
            self.count, self.mean, self.var = float(k), b_mean, b_var
            return
        total = self.count + k
        delta = b_mean - self.mean
        m2 = self.var * self.count + b_var * k + delta ** 2 * self.count * k / total
        self.mean = self.mean + delta * k / total
        self.var = np.maximum(m2 / total, 0.0)
        self.count = total

    def freeze(self) -> None:
        self.frozen = True

    def normalize(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.mean) / np.sqrt(self.var + NORMALIZER_EPS)
        return np.clip(z, -NORMALIZED_CLIP, NORMALIZED_CLIP)


def compress_mask(kind: ObjectiveKind, node_count: int, local_iterations: int, dimension: int) -> np.ndarray:
    """True on sigma and gradient coordinates of the flattened state."""
    if not ObjectiveKind(kind).has_smooth_part:
        return np.ones(node_count * local_iterations * dimension, dtype=bool)
    block = np.concatenate([np.ones(2 * dimension, dtype=bool), np.zeros(dimension, dtype=bool)])
    return np.tile(block, node_count * local_iterations)


class StateEncoder:
    """Raw flattened MDP state -> normalized float64 tensor."""

    def __init__(self, mask: np.ndarray, use_log_compress: bool = True, normalizer: Optional[Normalizer] = None):
        self.mask = np.asarray(mask, dtype=bool)
        self.use_log_compress = use_log_compress
        self.normalizer = normalizer or Normalizer(self.mask.shape[0])

    @property
    def state_dim(self) -> int:
        return self.mask.shape[0]

    def preprocess(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        if raw.shape[-1] != self.state_dim:
            raise ParameterError(f"state has {raw.shape[-1]} entries, encoder expects {self.state_dim}")
        if not self.use_log_compress:
            return raw
        return np.where(self.mask, log_compress(raw), raw)

    def observe(self, raw_states: np.ndarray) -> None:
        self.normalizer.update(self.preprocess(np.atleast_2d(raw_states)))

    def encode(self, raw: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(self.normalizer.normalize(self.preprocess(raw)), dtype=DTYPE)


def seeded_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


def build_networks(
    state_dim: int,
    action_dim: int,
    seed: int,
    hidden_sizes: Sequence[int] = (64, 64),
    init_log_std: float = 0.0,
) -> tuple[GaussianPolicy, Mlp]:
    """Policy and value net initialized from a private torch stream."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        policy = GaussianPolicy(state_dim, action_dim, hidden_sizes, init_log_std)
        value_net = Mlp(state_dim, 1, hidden_sizes)
        # near-constant initial mean when cloning is skipped
        with torch.no_grad():
            policy.mean_net.net[-1].weight.mul_(POLICY_HEAD_GAIN)
    return policy, value_net
