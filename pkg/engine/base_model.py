"""
The distributed, parameterized base model.

Every node keeps a primal iterate x_i and a dual iterate q_i. One iteration
is two-phase: all nodes solve their local x-update from neighbor values,
then all nodes refresh their local consensus information and dual.
"""
import logging
from typing import Optional

import numpy as np

from problems.models import ObjectiveKind, ProblemInstance
from problems.objectives import full_objective, hessian_eigenvalues, local_value, smooth_hessian, smooth_value_grad
from prox.models import QuadraticTerm
from prox.solvers import solve_lasso_quadratic, solve_nonsmooth, solve_smooth
from simulator.exceptions import (
    DegenerateParameterError,
    DivergenceError,
    MissingSolutionError,
    NonconvergedError,
    ParameterError,
    SubproblemError,
)
from topology.models import Graph, WeightMatrix

from .models import (
    ActionTriple,
    IterationObservation,
    LocalObservation,
    Metrics,
    NetworkState,
    SolverOptions,
)

logger = logging.getLogger(__name__)

DEFAULT_OPTIONS = SolverOptions()


def init_network(inst: ProblemInstance, g: Optional[Graph] = None, seed: int = 0) -> NetworkState:
    """
    Zero primal and dual iterates. The graph, when given, must have one node
    per local objective; the seed does not influence the start.
    """
    if g is not None and g.node_count != inst.node_count:
        raise ParameterError(f"graph has {g.node_count} nodes, instance has {inst.node_count}")
    shape = (inst.node_count, inst.dimension)
    return NetworkState(x=np.zeros(shape), q=np.zeros(shape))


def local_consensus(x: np.ndarray, P: WeightMatrix, i: int) -> np.ndarray:
    """sigma_i = sum over the closed neighborhood of p_ij x_j."""
    nbrs = list(P.closed_neighborhood(i))
    return P.P[i, nbrs] @ x[nbrs]


def _local_derivatives(inst: ProblemInstance, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    N, d = x.shape
    grads = np.zeros((N, d))
    hessians = np.zeros((N, d, d))
    if not inst.kind.has_smooth_part:
        return grads, hessians
    for i, obj in enumerate(inst.objectives):
        grads[i] = smooth_value_grad(obj, x[i])[1]
        hessians[i] = smooth_hessian(obj, x[i])
    return grads, hessians


def _observe(inst: ProblemInstance, P: WeightMatrix, x: np.ndarray) -> IterationObservation:
    grads, hessians = _local_derivatives(inst, x)
    sigma = np.stack([local_consensus(x, P, i) for i in range(x.shape[0])])
    eigs = np.stack([hessian_eigenvalues(H) for H in hessians])
    return IterationObservation(sigma=sigma, grad=grads, eigs=eigs, hessians=hessians)


def _solve_node(inst, i, x_i, q_i, sigma_i, grad_i, hess_i, a: ActionTriple, options: SolverOptions) -> np.ndarray:
    obj = inst.objectives[i]
    d = x_i.shape[0]
    M = a.alpha * hess_i + a.beta * np.eye(d)
    c = q_i - M @ x_i + grad_i + a.rho * sigma_i
    try:
        if obj.kind is ObjectiveKind.LOGISTIC:
            return solve_smooth(QuadraticTerm(M=M, linear=c)).x
        if obj.kind is ObjectiveKind.LEAST_SQUARES_LASSO:
            return solve_lasso_quadratic(
                QuadraticTerm(M=M, linear=c), obj.lam, tol=options.tol, max_inner=options.max_inner, x0=x_i
            ).x
        return solve_nonsmooth(a.beta, c, obj, tol=options.tol, max_inner=options.max_inner, x0=x_i).x
    except (NonconvergedError, DegenerateParameterError) as e:
        logger.warning(f"Subproblem at node {i} failed under {a.as_tuple()}: {e}", exc_info=True)
        raise SubproblemError(i, e) from e


def step(
    state: NetworkState,
    inst: ProblemInstance,
    P: WeightMatrix,
    a: ActionTriple,
    options: SolverOptions = DEFAULT_OPTIONS,
) -> NetworkState:
    """
    One iteration k -> k+1 under action a. The returned state carries the
    (sigma, grad, eigs) observation at k+1.
    """
    x, q = state.x, state.q
    obs = state.observation if state.observation is not None else _observe(inst, P, x)

    x_next = np.empty_like(x)
    for i in range(state.node_count):
        x_next[i] = _solve_node(inst, i, x[i], q[i], obs.sigma[i], obs.grad[i], obs.hessians[i], a, options)
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(f"non-finite primal iterate after iteration {state.iteration + 1}")

    next_obs = _observe(inst, P, x_next)
    q_next = q + a.rho * next_obs.sigma
    return NetworkState(
        x=x_next,
        q=q_next,
        iteration=state.iteration + 1,
        round=state.round,
        observation=next_obs,
    )


def run_round(
    state: NetworkState,
    inst: ProblemInstance,
    P: WeightMatrix,
    a: ActionTriple,
    n: int,
    options: SolverOptions = DEFAULT_OPTIONS,
    trace: Optional[list[NetworkState]] = None,
) -> tuple[NetworkState, list[LocalObservation]]:
    """
    n iterations under one action. Returns the state at the round boundary
    and, per node, the n observation triples of iterations k+1..k+n.
    """
    if n < 1:
        raise ParameterError(f"a round needs at least one local iteration, got {n}")
    blocks = []
    for _ in range(n):
        state = step(state, inst, P, a, options)
        blocks.append(state.observation)
        if trace is not None:
            trace.append(state)
    state = NetworkState(x=state.x, q=state.q, iteration=state.iteration, round=state.round + 1,
                         observation=state.observation)
    per_node = [
        LocalObservation(
            sigma=np.stack([b.sigma[i] for b in blocks]),
            grad=np.stack([b.grad[i] for b in blocks]),
            eigs=np.stack([b.eigs[i] for b in blocks]),
        )
        for i in range(state.node_count)
    ]
    return state, per_node


def flatten_observations(observations: list[LocalObservation], kind: ObjectiveKind) -> np.ndarray:
    """Node-major concatenation of the round's observations: the MDP state."""
    return np.concatenate([o.flatten(kind) for o in observations])


def metrics(state: NetworkState, inst: ProblemInstance) -> Metrics:
    if inst.x_star is None:
        raise MissingSolutionError(f"instance {inst.instance_id} has no reference solution")
    x = state.x
    mse = float(np.mean(np.sum((x - inst.x_star) ** 2, axis=1)))
    value = sum(local_value(obj, x[i]) for i, obj in enumerate(inst.objectives))
    objective_error = abs(value - full_objective(inst, inst.x_star))
    consensus_error = float(np.sum((x - x.mean(axis=0)) ** 2))
    return Metrics(mse=mse, objective_error=float(objective_error), consensus_error=consensus_error)


def convexity_safeguard(a: ActionTriple, hessian_eig_min: float, lambda_max_P: float) -> bool:
    """
    Sufficient condition for the surrogate-minus-penalty to stay convex.
    Advisory only.
    """
    return a.alpha * hessian_eig_min + a.beta >= a.rho * lambda_max_P
