"""
The base model driven by one constant action for every iteration.
"""
import itertools
import logging
import math
from typing import Sequence

import numpy as np

from engine.base_model import DEFAULT_OPTIONS, init_network, metrics, step
from engine.models import ActionTriple, MetricRow, SolverOptions
from problems.models import ObjectiveKind, ProblemInstance
from simulator.exceptions import DivergenceError, ParameterError, SimulatorError
from topology.models import WeightMatrix

from .models import ComparisonRow, Trace

logger = logging.getLogger(__name__)

DIVERGENCE_MSE = 1e6


def run_fixed_policy(
    inst: ProblemInstance,
    weights: WeightMatrix,
    a: ActionTriple,
    iterations: int,
    options: SolverOptions = DEFAULT_OPTIONS,
    algorithm: str = "fixed",
    abort_mse: float = DIVERGENCE_MSE,
) -> Trace:
    """
    Runs `iterations` base-model steps from the zero start. A blow-up (non-finite
    iterate or MSE above `abort_mse`) ends the trace and flags it; subproblem
    failures propagate.
    """
    if iterations < 1:
        raise ParameterError(f"iterations must be positive, got {iterations}")
    trace = Trace(algorithm=algorithm, instance_id=inst.instance_id)
    state = init_network(inst)
    for _ in range(iterations):
        try:
            state = step(state, inst, weights, a, options)
        except DivergenceError as e:
            logger.info(f"Fixed action {a.as_tuple()} diverged on {inst.instance_id}: {e}")
            trace.diverged = True
            break
        m = metrics(state, inst)
        trace.rows.append(ComparisonRow.from_metric_row(algorithm, MetricRow.build(inst.instance_id, state.iteration, m, a)))
        if not math.isfinite(m.mse) or m.mse > abort_mse:
            logger.info(f"Fixed action {a.as_tuple()} left the MSE bound on {inst.instance_id} at iteration {state.iteration}")
            trace.diverged = True
            break
    return trace


def action_grid(alphas: Sequence[float], betas: Sequence[float], rhos: Sequence[float], kind: ObjectiveKind) -> list[ActionTriple]:
    """Cartesian grid in (alpha, beta, rho) order; alpha collapses to 0 for kinds without a smooth part."""
    if not kind.has_smooth_part:
        alphas = [0.0]
    return [ActionTriple(alpha=a, beta=b, rho=r) for a, b, r in itertools.product(alphas, betas, rhos)]


def tune_fixed_policy(
    val_set: Sequence[ProblemInstance],
    weights: WeightMatrix,
    grid: Sequence[ActionTriple],
    iterations: int,
    options: SolverOptions = DEFAULT_OPTIONS,
) -> ActionTriple:
    """
    Grid point with the lowest mean final MSE over the validation instances.
    Divergent or failing candidates score inf; ties go to the earliest point.
    """
    if not grid:
        raise ParameterError("the action grid is empty")
    best, best_score = grid[0], math.inf
    for a in grid:
        scores = []
        for inst in val_set:
            try:
                scores.append(run_fixed_policy(inst, weights, a, iterations, options).final_mse)
            except SimulatorError as e:
                logger.debug(f"Candidate {a.as_tuple()} failed on {inst.instance_id}: {e}")
                scores.append(math.inf)
        score = float(np.mean(scores)) if scores else math.inf
        logger.debug(f"Fixed action {a.as_tuple()}: mean final MSE {score:.4e}")
        if score < best_score:
            best, best_score = a, score
    logger.info(f"Tuned fixed action {best.as_tuple()} with validation MSE {best_score:.4e}")
    return best
