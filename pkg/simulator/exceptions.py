"""
Error hierarchy shared by every app of the simulator.
"""
from typing import Optional

import numpy as np


class SimulatorError(Exception):
    """Root of all domain errors raised by the simulator."""


class ConfigError(SimulatorError):
    pass


class ParameterError(SimulatorError):
    pass


class DegenerateParameterError(SimulatorError):
    """A subproblem matrix that should be positive definite is not."""


class NonconvergedError(SimulatorError):
    """
    An iterative solver ran out of iterations. Carries the best iterate seen
    and its optimality residual so callers can decide what to do with it.
    """

    def __init__(self, message: str, best_x: Optional[np.ndarray] = None, residual: float = float("inf")):
        super().__init__(message)
        self.best_x = best_x
        self.residual = residual


class SubproblemError(SimulatorError):
    def __init__(self, node: int, cause: SimulatorError):
        super().__init__(f"node {node}: {cause}")
        self.node = node
        self.cause = cause


class DatasetError(SimulatorError):
    pass


class CheckpointError(SimulatorError):
    pass


class MissingSolutionError(SimulatorError):
    pass


class DivergenceError(SimulatorError):
    pass


class PretrainError(SimulatorError):
    """Behavior cloning left the policy mean outside the baseline tolerance."""
