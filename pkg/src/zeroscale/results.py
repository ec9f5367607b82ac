"""Result records shared across estimators."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field


@dataclass
class EstimateResult:
    value: float
    se: float
    n: int
    estimator: str
    transform: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def tstat(self) -> float:
        if self.se > 0 and math.isfinite(self.se):
            return self.value / self.se
        return math.nan

    def to_dict(self) -> dict:
        out = asdict(self)
        out["tstat"] = self.tstat
        return out


@dataclass
class PropEffect:
    """exp(beta_j) - 1 with its delta-method standard error."""

    value: float
    se: float
    index: int
    coefficient: float
    coefficient_se: float
    label: str = ""

    @property
    def tstat(self) -> float:
        return self.value / self.se if self.se > 0 else math.nan

    def interval(self, z: float = 1.96, log_scale: bool = False) -> tuple[float, float]:
        """Normal interval; ``log_scale`` maps exp(beta +- z se) - 1 instead."""
        if log_scale:
            return (math.expm1(self.coefficient - z * self.coefficient_se),
                    math.expm1(self.coefficient + z * self.coefficient_se))
        return self.value - z * self.se, self.value + z * self.se

    def to_dict(self) -> dict:
        out = asdict(self)
        out["tstat"] = self.tstat
        return out
