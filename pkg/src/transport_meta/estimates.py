"""Result types shared by all estimators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass
class ContrastEstimate:
    """One estimated treatment contrast for the target population.

    ``source`` is a trial id (as a string) or "pooled"; ``n_used`` counts the
    rows each role contributed (target sample, trial arms, ...).
    """

    estimator: str
    z: str
    z_prime: str
    source: str
    point: float
    variance: float | None = None
    ci: tuple[float, float] | None = None
    level: float = 0.95
    ci_method: str | None = None
    n_used: dict[str, int] = field(default_factory=dict)
    warnings: list[dict] = field(default_factory=list)
    percentile_ci: tuple[float, float] | None = None

    def __post_init__(self):
        if self.variance is not None and self.variance < 0:
            raise ValueError("variance must be nonnegative")
        if self.ci is not None and not (self.ci[0] <= self.point <= self.ci[1]):
            raise ValueError(
                f"confidence interval {self.ci} does not bracket the point {self.point}"
            )

    @property
    def se(self) -> float | None:
        return None if self.variance is None else float(np.sqrt(self.variance))

    def to_dict(self) -> dict[str, Any]:
        return {
            "estimator": self.estimator,
            "z": self.z,
            "z_prime": self.z_prime,
            "source": self.source,
            "point": self.point,
            "variance": self.variance,
            "se": self.se,
            "ci": list(self.ci) if self.ci is not None else None,
            "percentile_ci": list(self.percentile_ci) if self.percentile_ci is not None else None,
            "level": self.level,
            "ci_method": self.ci_method,
            "n_used": dict(sorted(self.n_used.items())),
            "warnings": self.warnings,
        }

    @staticmethod
    def from_dict(d: dict) -> "ContrastEstimate":
        return ContrastEstimate(
            estimator=d["estimator"], z=d["z"], z_prime=d["z_prime"], source=d["source"],
            point=d["point"], variance=d.get("variance"),
            ci=tuple(d["ci"]) if d.get("ci") else None,
            level=d.get("level", 0.95), ci_method=d.get("ci_method"),
            n_used=d.get("n_used", {}), warnings=d.get("warnings", []),
            percentile_ci=tuple(d["percentile_ci"]) if d.get("percentile_ci") else None,
        )


def format_estimate(est: ContrastEstimate, digits: int = 1) -> str:
    """Render "point (lower, upper)" the way result tables print it."""
    if est.ci is None:
        return f"{est.point:.{digits}f}"
    return f"{est.point:.{digits}f} ({est.ci[0]:.{digits}f}, {est.ci[1]:.{digits}f})"
