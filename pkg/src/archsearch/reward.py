"""Constraint-penalized reward: performance multiplied by a soft penalty
factor base**V for each resource bound, where V measures how badly the
bound is violated (0 when satisfied)."""

from __future__ import annotations

from dataclasses import dataclass

METRICS = ("params", "model_size_bytes", "flops", "compute_intensity")
UPPER = "upper"   # configured as op "<": use must stay below the threshold
LOWER = "lower"   # configured as op ">": use must stay above the threshold


@dataclass(frozen=True)
class Constraint:
    metric: str
    direction: str
    threshold: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.direction not in (UPPER, LOWER):
            raise ValueError(f"direction must be {UPPER!r} or {LOWER!r}")
        if not self.threshold > 0:
            raise ValueError("threshold must be > 0")

    @staticmethod
    def from_dict(d: dict) -> "Constraint":
        op = d.get("op")
        if op not in ("<", ">"):
            raise ValueError(f"constraint op must be '<' or '>', got {op!r}")
        return Constraint(d["metric"], UPPER if op == "<" else LOWER,
                          float(d["value"]))

    def to_dict(self) -> dict:
        return {"metric": self.metric,
                "op": "<" if self.direction == UPPER else ">",
                "value": self.threshold}


@dataclass(frozen=True)
class RewardConfig:
    base_penalty: float = 0.9
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        if not (0.0 < self.base_penalty <= 1.0):
            raise ValueError("base_penalty must be in (0, 1]")
        object.__setattr__(self, "constraints", tuple(self.constraints))


def violation(value: float, constraint: Constraint) -> float:
    """Normalized extent of breaking one bound; 0 when satisfied.

    Upper bound (use < C):  max(0, U - C) / C.
    Lower bound (use > C):  |min(0, U - C)| / U, taken as a magnitude so the
    penalty base**V always discounts; U = 0 counts as a full violation of 1.
    """
    c = constraint.threshold
    if constraint.direction == UPPER:
        return max(0.0, value - c) / c
    if value <= 0.0:
        return 1.0
    return abs(min(0.0, value - c)) / value


def violations(uses: dict, cfg: RewardConfig) -> list[float]:
    return [violation(float(uses[c.metric]), c) for c in cfg.constraints]


def reward(performance: float, uses: dict, cfg: RewardConfig) -> float:
    """r = P * prod_j base**V_j. With no constraints r = P; always r <= P."""
    if not (0.0 <= performance <= 1.0):
        raise ValueError(f"performance must be in [0, 1], got {performance}")
    r = performance
    for c in cfg.constraints:
        r *= cfg.base_penalty ** violation(float(uses[c.metric]), c)
    return r
