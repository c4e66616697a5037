from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class QuadraticTerm:
    """1/2 x'Mx + linear'x, with M = alpha * Hessian + beta * I in the base model."""

    M: np.ndarray = field(repr=False)
    linear: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "M", np.atleast_2d(np.asarray(self.M, dtype=float)))
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float).reshape(-1))

    @property
    def dimension(self) -> int:
        return self.linear.shape[0]

    def value(self, x: np.ndarray) -> float:
        return 0.5 * float(x @ self.M @ x) + float(self.linear @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.M @ x + self.linear


@dataclass(frozen=True)
class SubproblemResult:
    x: np.ndarray
    residual: float
    inner_iterations: int
    polished: bool = False
    # best objective value seen at each momentum restart of the accelerated scheme
    restart_objectives: tuple[float, ...] = ()
