"""Checker for the additive-fusion activation inequality.

For any U, V, c, d, x, y the fused pre-activation satisfies
max(0, Ux + Vy + c + d) <= max(0, Ux + c) + max(0, Vy + d) elementwise, so
summing branch activations passes at least as strong a signal as activating
the concatenated input. The checker samples standard-normal instances and
counts violations beyond a small absolute slack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class FusionInequalityWitness:
    U: np.ndarray
    V: np.ndarray
    c: np.ndarray
    d: np.ndarray
    x: np.ndarray
    y: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray


@dataclass
class FusionCheckReport:
    trials: int
    violations: int
    max_excess: float
    witnesses: list[FusionInequalityWitness] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def fusion_sides(U, V, c, d, x, y):
    """Both sides of the inequality for one draw."""
    lhs = np.maximum(0.0, U @ x + V @ y + c + d)
    rhs = np.maximum(0.0, U @ x + c) + np.maximum(0.0, V @ y + d)
    return lhs, rhs


def verify_fusion_inequality(dim_x: int, dim_y: int, dim_out: int, trials: int,
                             rng: np.random.Generator | None = None,
                             slack: float = 1e-6,
                             keep_witnesses: int = 3) -> FusionCheckReport:
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = rng or np.random.default_rng(0)
    violations = 0
    max_excess = 0.0
    witnesses: list[FusionInequalityWitness] = []
    for _ in range(trials):
        U = rng.standard_normal((dim_out, dim_x))
        V = rng.standard_normal((dim_out, dim_y))
        c = rng.standard_normal(dim_out)
        d = rng.standard_normal(dim_out)
        x = rng.standard_normal(dim_x)
        y = rng.standard_normal(dim_y)
        lhs, rhs = fusion_sides(U, V, c, d, x, y)
        excess = lhs - rhs
        bad = excess > slack
        max_excess = max(max_excess, float(excess.max()))
        if bad.any():
            violations += int(bad.sum())
            if len(witnesses) < keep_witnesses:
                witnesses.append(FusionInequalityWitness(U, V, c, d, x, y, lhs, rhs))
    return FusionCheckReport(trials, violations, max_excess, witnesses)
