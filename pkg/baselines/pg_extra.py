"""
PG-EXTRA: decentralized proximal gradient with gradient-difference
correction, mixing with W = I - P and W~ = (I + W)/2.
"""
import logging
import math
from typing import Sequence

import numpy as np

from engine.base_model import DEFAULT_OPTIONS, metrics
from engine.models import NetworkState, SolverOptions
from problems.models import LocalObjective, ObjectiveKind, ProblemInstance
from problems.objectives import smooth_value_grad
from prox.solvers import soft_threshold, solve_nonsmooth
from simulator.exceptions import NonconvergedError, ParameterError, SimulatorError
from topology.graphs import mixing_matrix
from topology.models import WeightMatrix

from .fixed_policy import DIVERGENCE_MSE
from .models import ComparisonRow, Trace

logger = logging.getLogger(__name__)


def _smooth_gradients(inst: ProblemInstance, x: np.ndarray) -> np.ndarray:
    return np.stack([smooth_value_grad(obj, x[i])[1] for i, obj in enumerate(inst.objectives)])


def local_prox(obj: LocalObjective, y: np.ndarray, step: float, options: SolverOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """argmin_x r_i(x) + |x - y|^2 / (2 step)."""
    if obj.kind is ObjectiveKind.LOGISTIC:
        return y.copy()
    if obj.kind is ObjectiveKind.LEAST_SQUARES_LASSO:
        return soft_threshold(y, step * obj.lam)
    return solve_nonsmooth(1.0 / step, -y / step, obj, tol=options.tol, max_inner=options.max_inner, x0=y).x


def _prox_all(inst: ProblemInstance, y: np.ndarray, step: float, options: SolverOptions) -> np.ndarray:
    return np.stack([local_prox(obj, y[i], step, options) for i, obj in enumerate(inst.objectives)])


def run_pg_extra(
    inst: ProblemInstance,
    weights: WeightMatrix,
    step_size: float,
    iterations: int,
    options: SolverOptions = DEFAULT_OPTIONS,
    abort_mse: float = DIVERGENCE_MSE,
) -> Trace:
    """
    Zero start. Records metrics after every iteration and flags the trace
    as diverged once the iterate blows up.
    """
    if step_size <= 0:
        raise ParameterError(f"step size must be positive, got {step_size}")
    if iterations < 1:
        raise ParameterError(f"iterations must be positive, got {iterations}")

    W = mixing_matrix(weights).W
    W_tilde = 0.5 * (np.eye(W.shape[0]) + W)
    trace = Trace(algorithm="pg_extra", instance_id=inst.instance_id)

    x_old = np.zeros((inst.node_count, inst.dimension))
    grad_old = _smooth_gradients(inst, x_old)
    y = W @ x_old - step_size * grad_old
    for k in range(1, iterations + 1):
        if k > 1:
            grad = _smooth_gradients(inst, x)
            y = y + W @ x - W_tilde @ x_old - step_size * (grad - grad_old)
            x_old, grad_old = x, grad
        try:
            x = _prox_all(inst, y, step_size, options)
        except NonconvergedError as e:
            logger.warning(f"PG-EXTRA prox failed on {inst.instance_id} at iteration {k}: {e}")
            trace.diverged = True
            break
        if not np.all(np.isfinite(x)):
            trace.diverged = True
            break
        m = metrics(NetworkState(x=x, q=np.zeros_like(x), iteration=k), inst)
        trace.rows.append(ComparisonRow(
            "pg_extra", inst.instance_id, k, m.mse, m.objective_error, m.consensus_error, step=step_size,
        ))
        if not math.isfinite(m.mse) or m.mse > abort_mse:
            trace.diverged = True
            break
    if trace.diverged:
        logger.info(f"PG-EXTRA with step {step_size:g} diverged on {inst.instance_id}")
    return trace


def tune_pg_extra(
    val_set: Sequence[ProblemInstance],
    weights: WeightMatrix,
    steps: Sequence[float],
    iterations: int,
    options: SolverOptions = DEFAULT_OPTIONS,
) -> float:
    """Step with the lowest mean final validation MSE; ties go to the earliest step."""
    if not steps:
        raise ParameterError("the step grid is empty")
    best, best_score = steps[0], math.inf
    for s in steps:
        scores = []
        for inst in val_set:
            try:
                scores.append(run_pg_extra(inst, weights, s, iterations, options).final_mse)
            except SimulatorError as e:
                logger.debug(f"Step {s:g} failed on {inst.instance_id}: {e}")
                scores.append(math.inf)
        score = float(np.mean(scores)) if scores else math.inf
        if score < best_score:
            best, best_score = s, score
    logger.info(f"Tuned PG-EXTRA step {best:g} with validation MSE {best_score:.4e}")
    return best
