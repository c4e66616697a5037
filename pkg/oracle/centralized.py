"""
Centralized reference solvers. Ground-truth x* for an instance minimizes
sum_i s_i(x) + r_i(x) over one shared variable; certify() measures
optimality without trusting any solver.
"""
import logging

import numpy as np
from scipy.optimize import linprog

from problems.models import ObjectiveKind, ProblemInstance
from problems.objectives import full_objective, smooth_hessian, smooth_value_grad
from prox.models import QuadraticTerm
from prox.solvers import (
    accelerated_proximal_gradient,
    l1_residual,
    polyhedral_residual,
    polyhedral_rows,
    soft_threshold,
    solve_lasso_quadratic,
    solve_polyhedral,
)
from simulator.exceptions import NonconvergedError, SimulatorError

logger = logging.getLogger(__name__)

NEWTON_STEPS = 8


def _stacked_rows(inst: ProblemInstance):
    """Every sample row of every node, weighted 1/m_i, plus N*lam identity rows."""
    A = np.vstack([o.A for o in inst.objectives])
    b = np.concatenate([o.b for o in inst.objectives])
    w = np.concatenate([np.full(o.m, 1.0 / o.m) for o in inst.objectives])
    return polyhedral_rows(A, b, w, inst.node_count * inst.lam)


def _total_quadratic(inst: ProblemInstance) -> QuadraticTerm:
    M = sum(o.A.T @ o.A / o.m for o in inst.objectives)
    linear = -sum(o.A.T @ o.b / o.m for o in inst.objectives)
    return QuadraticTerm(M=M, linear=linear)


def _total_gradient(inst: ProblemInstance, x: np.ndarray) -> np.ndarray:
    return sum(smooth_value_grad(o, x)[1] for o in inst.objectives)


def certify(inst: ProblemInstance, x: np.ndarray) -> float:
    """dist(-sum grad s_i(x), d sum r_i(x))."""
    x = np.asarray(x, dtype=float)
    if inst.kind is ObjectiveKind.LOGISTIC:
        return float(np.linalg.norm(_total_gradient(inst, x)))
    if inst.kind is ObjectiveKind.LEAST_SQUARES_LASSO:
        return l1_residual(_total_gradient(inst, x), x, inst.node_count * inst.lam)
    K, shift, weights = _stacked_rows(inst)
    return polyhedral_residual(np.zeros_like(x), x, K, shift, weights)


def _solve_logistic(inst: ProblemInstance, tol: float, max_iter: int):
    lipschitz = sum(np.linalg.norm(o.A, 2) ** 2 / (4.0 * o.m) for o in inst.objectives)
    lipschitz += inst.node_count * inst.lam

    def objective(x):
        return sum(smooth_value_grad(o, x)[0] for o in inst.objectives)

    def newton_polish(x):
        for _ in range(NEWTON_STEPS):
            H = sum(smooth_hessian(o, x) for o in inst.objectives)
            try:
                x = x - np.linalg.solve(H, _total_gradient(inst, x))
            except np.linalg.LinAlgError:
                return None
            res = certify(inst, x)
            if res <= tol:
                return x, res
        return None

    return accelerated_proximal_gradient(
        objective=objective,
        gradient=lambda x: _total_gradient(inst, x),
        prox=lambda v, step: v,
        step=1.0 / lipschitz,
        x0=np.zeros(inst.dimension),
        residual=lambda x: certify(inst, x),
        tol=tol,
        max_iter=max_iter,
        polish=newton_polish,
    )


def solve_centralized(inst: ProblemInstance, tol: float = 1e-9, max_iter: int = 200_000) -> tuple[np.ndarray, float]:
    """
    Accelerated proximal gradient for the smooth and composite kinds,
    primal-dual splitting for the l1-regression kind.
    """
    try:
        if inst.kind is ObjectiveKind.LEAST_SQUARES_LASSO:
            result = solve_lasso_quadratic(
                _total_quadratic(inst), inst.node_count * inst.lam, tol=tol, max_inner=max_iter
            )
        elif inst.kind is ObjectiveKind.LOGISTIC:
            result = _solve_logistic(inst, tol, max_iter)
        else:
            K, shift, weights = _stacked_rows(inst)
            result = solve_polyhedral(0.0, np.zeros(inst.dimension), K, shift, weights, tol=tol, max_inner=max_iter)
    except NonconvergedError as e:
        logger.error(f"Oracle failed on {inst.instance_id}: {e}", exc_info=True)
        raise NonconvergedError(f"oracle failed on {inst.instance_id}: {e}", best_x=e.best_x, residual=e.residual) from e

    residual = certify(inst, result.x)
    logger.debug(f"Oracle {inst.instance_id}: residual {residual:.2e} after {result.inner_iterations} iterations")
    return result.x, residual


def _reference_l1(inst: ProblemInstance) -> np.ndarray:
    """LP over (x, t, u): min sum w t + N lam sum u, |Ax - b| <= t, |x| <= u."""
    A = np.vstack([o.A for o in inst.objectives])
    b = np.concatenate([o.b for o in inst.objectives])
    w = np.concatenate([np.full(o.m, 1.0 / o.m) for o in inst.objectives])
    rows, d = A.shape
    lam = inst.node_count * inst.lam
    c = np.concatenate([np.zeros(d), w, np.full(d, lam)])
    I_r, I_d = np.eye(rows), np.eye(d)
    Z_rd, Z_dr = np.zeros((rows, d)), np.zeros((d, rows))
    A_ub = np.block([
        [A, -I_r, Z_rd],
        [-A, -I_r, Z_rd],
        [I_d, Z_dr, -I_d],
        [-I_d, Z_dr, -I_d],
    ])
    b_ub = np.concatenate([b, -b, np.zeros(2 * d)])
    bounds = [(None, None)] * d + [(0, None)] * (rows + d)
    solution = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not solution.success:
        raise NonconvergedError(f"LP reference failed on {inst.instance_id}: {solution.message}")
    return solution.x[:d]


def solve_reference(inst: ProblemInstance, max_iter: int = 200_000, rel_tol: float = 1e-13) -> np.ndarray:
    """
    Independent second method: plain (unaccelerated) proximal gradient for
    the smooth and composite kinds, an LP reformulation for l1 regression.
    """
    if inst.kind is ObjectiveKind.L1_LASSO:
        return _reference_l1(inst)

    lam = inst.node_count * inst.lam if inst.kind is ObjectiveKind.LEAST_SQUARES_LASSO else 0.0
    if inst.kind is ObjectiveKind.LEAST_SQUARES_LASSO:
        lipschitz = float(np.linalg.eigvalsh(_total_quadratic(inst).M)[-1])
    else:
        lipschitz = sum(np.linalg.norm(o.A, 2) ** 2 / (4.0 * o.m) for o in inst.objectives)
        lipschitz += inst.node_count * inst.lam
    step = 1.0 / max(lipschitz, 1e-12)

    x = np.zeros(inst.dimension)
    value = full_objective(inst, x)
    for _ in range(max_iter):
        x = soft_threshold(x - step * _total_gradient(inst, x), step * lam)
        new_value = full_objective(inst, x)
        if value - new_value <= rel_tol * (1.0 + abs(value)):
            break
        value = new_value
    return x


def label_instance(inst: ProblemInstance, tol: float = 1e-9, max_iter: int = 200_000) -> ProblemInstance:
    x_star, residual = solve_centralized(inst, tol=tol, max_iter=max_iter)
    if residual > tol:
        raise SimulatorError(f"instance {inst.instance_id}: certified residual {residual:.2e} exceeds {tol:.1e}")
    return inst.with_solution(x_star, residual)
