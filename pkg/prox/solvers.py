"""
Solvers for the per-node x-update of the base model.

Each solver certifies its answer with a residual computed independently of
the iteration that produced it: the Euclidean distance from the negative
smooth gradient to the subdifferential of the nonsmooth part. Iterative
solvers periodically guess the active set (kinks and zero coordinates),
solve the resulting equality-constrained quadratic exactly and keep that
point only when the residual certifies it.
"""
import logging
from typing import Callable, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import lsq_linear

from problems.models import LocalObjective, ObjectiveKind
from simulator.exceptions import DegenerateParameterError, NonconvergedError, ParameterError

from .models import QuadraticTerm, SubproblemResult

logger = logging.getLogger(__name__)

POLISH_EVERY = 25
KINK_TOL = 1e-9
ACTIVE_SET_THRESHOLDS = (1e-3, 1e-5, 1e-7)


def soft_threshold(v, t: float) -> np.ndarray:
    """Componentwise sign(v) * max(|v| - t, 0), the prox of t|.|_1."""
    if t < 0:
        raise ParameterError(f"threshold must be nonnegative, got {t}")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


# === Independent optimality residuals ===
def l1_residual(grad: np.ndarray, x: np.ndarray, lam: float, zero_tol: float = 0.0) -> float:
    """dist(-grad, lam * d|x|_1)."""
    grad = np.asarray(grad, dtype=float)
    x = np.asarray(x, dtype=float)
    at_zero = np.abs(x) <= zero_tol
    per_coord = np.where(
        at_zero,
        np.maximum(np.abs(grad) - lam, 0.0),
        np.abs(grad + lam * np.sign(x)),
    )
    return float(np.linalg.norm(per_coord))


def polyhedral_rows(A: np.ndarray, b: np.ndarray, sample_weights, lam: float):
    """
    Rows (K, shift, weights) describing sum_k w_k |K_k x - shift_k| for
    weighted absolute residuals plus lam |x|_1; zero-weight rows are dropped.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[1]
    K = np.vstack([A, np.eye(d)])
    shift = np.concatenate([np.asarray(b, dtype=float), np.zeros(d)])
    weights = np.concatenate([np.broadcast_to(np.asarray(sample_weights, dtype=float), (A.shape[0],)), np.full(d, float(lam))])
    keep = weights > 0
    return K[keep], shift[keep], weights[keep]


def polyhedral_residual(smooth_grad, x, K, shift, weights, kink_tol: float = KINK_TOL) -> float:
    """
    dist(-smooth_grad, d sum_k w_k |K_k x - shift_k|). Rows within kink_tol of
    their kink get a free multiplier in [-1, 1]; the distance is then a
    box-constrained least-squares problem.
    """
    x = np.asarray(x, dtype=float)
    r = K @ x - shift
    kink = np.abs(r) <= kink_tol
    g0 = np.asarray(smooth_grad, dtype=float) + K[~kink].T @ (weights[~kink] * np.sign(r[~kink]))
    if not kink.any():
        return float(np.linalg.norm(g0))
    B = K[kink].T * weights[kink]
    try:
        sol = lsq_linear(B, -g0, bounds=(-1.0, 1.0), method="bvls")
    except (ValueError, LinAlgError):
        sol = lsq_linear(B, -g0, bounds=(-1.0, 1.0), method="trf", tol=1e-14)
    return float(np.linalg.norm(g0 + B @ sol.x))


# === Smooth subproblem ===
def solve_smooth(Q: QuadraticTerm) -> SubproblemResult:
    """x = -M^{-1} linear through a Cholesky factorization."""
    try:
        factor = cho_factor(Q.M, lower=True)
    except (LinAlgError, ValueError) as e:
        raise DegenerateParameterError(f"subproblem matrix is not positive definite: {e}") from e
    x = -cho_solve(factor, Q.linear)
    # one step of iterative refinement
    x = x - cho_solve(factor, Q.M @ x + Q.linear)
    return SubproblemResult(x=x, residual=float(np.linalg.norm(Q.M @ x + Q.linear)), inner_iterations=0)


# === Accelerated proximal gradient ===
def accelerated_proximal_gradient(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    prox: Callable[[np.ndarray, float], np.ndarray],
    step: float,
    x0: np.ndarray,
    residual: Callable[[np.ndarray], float],
    tol: float,
    max_iter: int,
    polish: Optional[Callable[[np.ndarray], Optional[tuple[np.ndarray, float]]]] = None,
) -> SubproblemResult:
    """
    FISTA with gradient-based adaptive restart: the momentum is dropped
    whenever the proximal step points against the last displacement,
    (y - x_new)'(x_new - x) > 0. Restarts depend on the iterates only, never
    on objective values. Each restart records the best objective seen so far.
    """
    x = np.array(x0, dtype=float)
    f_best = objective(x)
    best_x, best_res = x, residual(x)
    if best_res <= tol:
        return SubproblemResult(x=x, residual=best_res, inner_iterations=0)

    y, t = x.copy(), 1.0
    restarts: list[float] = []
    for k in range(1, max_iter + 1):
        x_new = prox(y - step * gradient(y), step)
        restart = float(np.dot(y - x_new, x_new - x)) > 0.0
        if restart:
            y, t = x_new.copy(), 1.0
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        x = x_new
        f_best = min(f_best, objective(x))
        if restart:
            restarts.append(f_best)

        res = residual(x)
        if res < best_res:
            best_x, best_res = x, res
        if res <= tol:
            return SubproblemResult(x=x, residual=res, inner_iterations=k, restart_objectives=tuple(restarts))
        if polish is not None and k % POLISH_EVERY == 0:
            polished = polish(x)
            if polished is not None:
                return SubproblemResult(x=polished[0], residual=polished[1], inner_iterations=k,
                                        polished=True, restart_objectives=tuple(restarts))

    if polish is not None:
        polished = polish(best_x)
        if polished is not None:
            return SubproblemResult(x=polished[0], residual=polished[1], inner_iterations=max_iter,
                                    polished=True, restart_objectives=tuple(restarts))
    raise NonconvergedError(
        f"accelerated proximal gradient stopped at residual {best_res:.3e} > {tol:.1e}",
        best_x=best_x,
        residual=best_res,
    )


def solve_lasso_quadratic(
    Q: QuadraticTerm,
    lam: float,
    tol: float = 1e-10,
    max_inner: int = 5000,
    x0: Optional[np.ndarray] = None,
) -> SubproblemResult:
    """
    Minimizes 1/2 x'Mx + linear'x + lam |x|_1 with step 1/lambda_max(M).
    """
    if lam < 0:
        raise ParameterError(f"regularization weight must be nonnegative, got {lam}")
    M, c = Q.M, Q.linear

    def residual(x):
        return l1_residual(M @ x + c, x, lam)

    def polish(x):
        support = np.arange(x.size) if lam == 0 else np.flatnonzero(x)
        candidate = np.zeros_like(x)
        if support.size:
            M_ss = M[np.ix_(support, support)]
            rhs = -(c[support] + lam * np.sign(x[support]))
            if lam == 0:
                rhs = -c[support]
            try:
                factor = cho_factor(M_ss, lower=True)
            except (LinAlgError, ValueError):
                return None
            x_s = cho_solve(factor, rhs)
            x_s = x_s + cho_solve(factor, rhs - M_ss @ x_s)
            candidate[support] = x_s
        res = residual(candidate)
        return (candidate, res) if res <= tol else None

    start = np.zeros(Q.dimension) if x0 is None else np.asarray(x0, dtype=float)
    polished = polish(start)
    if polished is not None:
        return SubproblemResult(x=polished[0], residual=polished[1], inner_iterations=0, polished=True)

    lipschitz = float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])
    if not np.isfinite(lipschitz) or lipschitz <= 0:
        raise DegenerateParameterError(f"subproblem matrix has largest eigenvalue {lipschitz}")

    return accelerated_proximal_gradient(
        objective=lambda x: Q.value(x) + lam * float(np.abs(x).sum()),
        gradient=Q.gradient,
        prox=lambda v, step: soft_threshold(v, step * lam),
        step=1.0 / lipschitz,
        x0=start,
        residual=residual,
        tol=tol,
        max_iter=max_inner,
        polish=polish,
    )


# === Nonsmooth subproblem ===
def _polish_active_set(beta, c, K, shift, weights, x, active) -> Optional[np.ndarray]:
    r = K @ x - shift
    free = np.ones(K.shape[0], dtype=bool)
    free[active] = False
    g = c + K[free].T @ (weights[free] * np.sign(r[free]))
    K_a, shift_a = K[active], shift[active]
    if beta > 0:
        if active.size == 0:
            return -g / beta
        mu = np.linalg.lstsq(K_a @ K_a.T, -beta * shift_a - K_a @ g, rcond=None)[0]
        return -(g + K_a.T @ mu) / beta
    if active.size == 0:
        return None
    return x + np.linalg.lstsq(K_a, shift_a - K_a @ x, rcond=None)[0]


def solve_polyhedral(
    beta: float,
    linear: np.ndarray,
    K: np.ndarray,
    shift: np.ndarray,
    weights: np.ndarray,
    tol: float = 1e-10,
    max_inner: int = 5000,
    x0: Optional[np.ndarray] = None,
    kink_tol: float = KINK_TOL,
) -> SubproblemResult:
    """
    Minimizes beta/2 |x|^2 + linear'x + sum_k w_k |K_k x - shift_k| by
    primal-dual splitting with closed-form resolvents (accelerated when
    beta > 0), polishing on the guessed active set.
    """
    if beta < 0:
        raise ParameterError(f"beta must be nonnegative, got {beta}")
    c = np.asarray(linear, dtype=float)
    d = c.size

    def residual(x):
        return polyhedral_residual(beta * x + c, x, K, shift, weights, kink_tol)

    def polish(x):
        r = np.abs(K @ x - shift)
        scale = 1.0 + np.abs(shift)
        candidates = [np.flatnonzero(r <= thr * scale) for thr in ACTIVE_SET_THRESHOLDS]
        if beta == 0:
            candidates.append(np.sort(np.argsort(r, kind="stable")[:d]))
        seen = set()
        for active in candidates:
            key = tuple(active.tolist())
            if key in seen:
                continue
            seen.add(key)
            candidate = _polish_active_set(beta, c, K, shift, weights, x, active)
            if candidate is None or not np.all(np.isfinite(candidate)):
                continue
            res = residual(candidate)
            if res <= tol:
                return candidate, res
        return None

    x = np.zeros(d) if x0 is None else np.array(x0, dtype=float)
    polished = polish(x)
    if polished is not None:
        return SubproblemResult(x=polished[0], residual=polished[1], inner_iterations=0, polished=True)

    norm_K = float(np.linalg.norm(K, 2)) if K.size else 1.0
    tau = sigma = 0.99 / max(norm_K, 1e-12)
    y = np.zeros(K.shape[0])
    x_bar = x.copy()
    for k in range(1, max_inner + 1):
        y = np.clip(y + sigma * (K @ x_bar - shift), -weights, weights)
        x_new = (x - tau * (K.T @ y + c)) / (1.0 + tau * beta)
        theta = 1.0 / np.sqrt(1.0 + 2.0 * beta * tau) if beta > 0 else 1.0
        tau, sigma = theta * tau, sigma / theta
        x_bar = x_new + theta * (x_new - x)
        x = x_new

        if k % POLISH_EVERY == 0:
            polished = polish(x)
            if polished is not None:
                return SubproblemResult(x=polished[0], residual=polished[1], inner_iterations=k, polished=True)

    best_x, best_res = x, residual(x)
    if best_res <= tol:
        return SubproblemResult(x=x, residual=best_res, inner_iterations=max_inner)
    raise NonconvergedError(
        f"primal-dual splitting stopped at residual {best_res:.3e} > {tol:.1e}",
        best_x=best_x,
        residual=best_res,
    )


def solve_nonsmooth(
    beta: float,
    linear: np.ndarray,
    obj: LocalObjective,
    tol: float = 1e-10,
    max_inner: int = 5000,
    x0: Optional[np.ndarray] = None,
) -> SubproblemResult:
    """
    x-update for the l1-regression kind:
    beta/2 |x|^2 + linear'x + mean_j |a_j'x - b_j| + lam |x|_1.
    """
    if obj.kind is not ObjectiveKind.L1_LASSO:
        raise ParameterError(f"solve_nonsmooth handles l1_lasso objectives, got {obj.kind.value}")
    if beta <= 0:
        raise ParameterError(f"beta must be positive, got {beta}")
    K, shift, weights = polyhedral_rows(obj.A, obj.b, 1.0 / obj.m, obj.lam)
    return solve_polyhedral(beta, linear, K, shift, weights, tol=tol, max_inner=max_inner, x0=x0)
