"""
Values, derivatives and Hessian spectra of the three local objective kinds.
"""
import numpy as np
from scipy.special import expit

from topology.graphs import symmetric_eigenvalues

from .models import LocalObjective, ObjectiveKind, ProblemInstance


def smooth_value_grad(obj: LocalObjective, x: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Returns s_i(x) and its gradient; the l1-regression kind has no smooth part.
    """
    x = np.asarray(x, dtype=float)
    if obj.kind is ObjectiveKind.L1_LASSO:
        return 0.0, np.zeros_like(x)

    z = obj.A @ x
    if obj.kind is ObjectiveKind.LEAST_SQUARES_LASSO:
        residual = z - obj.b
        return 0.5 * float(residual @ residual) / obj.m, obj.A.T @ residual / obj.m

    # logistic: -b z + log(1 + e^z), plus the folded-in ridge term
    value = float(np.mean(np.logaddexp(0.0, z) - obj.b * z)) + 0.5 * obj.lam * float(x @ x)
    grad = obj.A.T @ (expit(z) - obj.b) / obj.m + obj.lam * x
    return value, grad


def smooth_hessian(obj: LocalObjective, x: np.ndarray) -> np.ndarray:
    d = obj.dimension
    if obj.kind is ObjectiveKind.L1_LASSO:
        return np.zeros((d, d))
    if obj.kind is ObjectiveKind.LEAST_SQUARES_LASSO:
        return obj.A.T @ obj.A / obj.m
    p = expit(obj.A @ np.asarray(x, dtype=float))
    weights = p * (1.0 - p)
    return (obj.A.T * weights) @ obj.A / obj.m + obj.lam * np.eye(d)


def hessian_eigenvalues(H: np.ndarray) -> np.ndarray:
    return symmetric_eigenvalues(H)


def nonsmooth_value(obj: LocalObjective, x: np.ndarray) -> float:
    """r_i(x)."""
    x = np.asarray(x, dtype=float)
    if obj.kind is ObjectiveKind.LOGISTIC:
        return 0.0
    value = obj.lam * float(np.abs(x).sum())
    if obj.kind is ObjectiveKind.L1_LASSO:
        value += float(np.mean(np.abs(obj.A @ x - obj.b)))
    return value


def local_value(obj: LocalObjective, x: np.ndarray) -> float:
    return smooth_value_grad(obj, x)[0] + nonsmooth_value(obj, x)


def full_objective(inst: ProblemInstance, x: np.ndarray) -> float:
    """Sum over nodes of s_i(x) + r_i(x) at a common point."""
    return float(sum(local_value(obj, x) for obj in inst.objectives))
