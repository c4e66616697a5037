"""
The MDP around the base model: one timestep is one communication round,
the state is every node's observation block from the previous round and
the reward is the (compressed, negated) MSE accumulated over the round.
"""
import logging
import math
from typing import Optional

import numpy as np

from engine.base_model import flatten_observations, init_network, metrics, run_round
from engine.models import ActionTriple, MetricRow, NetworkState
from problems.models import ProblemInstance
from simulator.exceptions import DivergenceError, MissingSolutionError, SimulatorError, SubproblemError
from topology.models import WeightMatrix

from .models import EnvConfig, StepResult

logger = logging.getLogger(__name__)

# MSE is scaled by this before log compression
LOG_REWARD_SCALE = 1e6


def round_reward(mses, mode: str = "log", scale: float = 10.0) -> float:
    mses = np.asarray(mses, dtype=float)
    if mode == "linear":
        return -float(mses.sum())
    return -float(np.log10(1.0 + mses * LOG_REWARD_SCALE).sum()) / scale


class AmmEnvironment:
    def __init__(self, inst: ProblemInstance, weights: WeightMatrix, cfg: EnvConfig):
        if inst.x_star is None:
            raise MissingSolutionError(f"instance {inst.instance_id} must be labeled before rollouts")
        self.inst = inst
        self.weights = weights
        self.cfg = cfg
        self.network: Optional[NetworkState] = None
        self.rows: list[MetricRow] = []
        self.record = False
        self._rounds_taken = 0
        self._done = True

    @property
    def state_dim(self) -> int:
        return self.cfg.state_dim(self.inst.node_count, self.inst.dimension)

    def _round(self, a: ActionTriple) -> tuple[np.ndarray, list[float]]:
        trace: list[NetworkState] = []
        try:
            self.network, observations = run_round(
                self.network, self.inst, self.weights, a, self.cfg.local_iterations,
                self.cfg.solver_options, trace=trace,
            )
        finally:
            mses = []
            for s in trace:
                m = metrics(s, self.inst)
                mses.append(m.mse)
                if self.record:
                    self.rows.append(MetricRow.build(self.inst.instance_id, s.iteration, m, a))
        return flatten_observations(observations, self.cfg.kind), mses

    def reset(self, record: bool = False) -> np.ndarray:
        """
        Zero start, then one round under the baseline action to form s0.
        Failures here propagate.
        """
        self.network = init_network(self.inst)
        self.rows = []
        self.record = False
        state, _ = self._round(self.cfg.baseline_action)
        self.record = record
        self._rounds_taken = 0
        self._done = False
        return state

    def step(self, a: ActionTriple) -> StepResult:
        if self._done:
            raise SimulatorError("step() called on a finished episode; call reset() first")
        self._rounds_taken += 1
        try:
            state, mses = self._round(a)
        except (SubproblemError, DivergenceError) as e:
            logger.warning(f"Episode on {self.inst.instance_id} aborted in round {self._rounds_taken}: {e}")
            self._done = True
            return StepResult(
                state=np.zeros(self.state_dim),
                reward=-self.cfg.abort_penalty,
                done=True,
                aborted=True,
            )

        reward = round_reward(mses, self.cfg.reward_mode, self.cfg.reward_scale)
        aborted = any(not math.isfinite(v) or v > self.cfg.abort_mse for v in mses)
        if aborted:
            logger.info(f"Episode on {self.inst.instance_id} aborted: MSE above {self.cfg.abort_mse:g}")
            reward = (reward if math.isfinite(reward) else 0.0) - self.cfg.abort_penalty
            state = np.nan_to_num(state, nan=0.0, posinf=0.0, neginf=0.0)
        self._done = aborted or self._rounds_taken >= self.cfg.rounds_per_episode
        return StepResult(state=state, reward=reward, done=self._done, aborted=aborted, mses=mses)
