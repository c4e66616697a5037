import math
from dataclasses import dataclass, field

from engine.models import MetricRow

COMPARISON_COLUMNS = (
    "algorithm", "instance_id", "iter", "mse", "obj_err", "cons_err", "alpha", "beta", "rho", "step",
)


@dataclass(frozen=True)
class ComparisonRow:
    algorithm: str
    instance_id: str
    iter: int
    mse: float
    obj_err: float
    cons_err: float
    alpha: float = math.nan
    beta: float = math.nan
    rho: float = math.nan
    # PG-EXTRA step size; NaN for base-model rows
    step: float = math.nan

    @classmethod
    def from_metric_row(cls, algorithm: str, row: MetricRow) -> "ComparisonRow":
        return cls(algorithm, row.instance_id, row.iter, row.mse, row.obj_err, row.cons_err, row.alpha, row.beta, row.rho)


@dataclass
class Trace:
    """Per-iteration metrics of one algorithm on one instance."""

    algorithm: str
    instance_id: str
    rows: list[ComparisonRow] = field(default_factory=list)
    diverged: bool = False

    @property
    def final_mse(self) -> float:
        if self.diverged or not self.rows:
            return math.inf
        return self.rows[-1].mse
