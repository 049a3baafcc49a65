"""One-sided CUSUM with reset-on-trigger.

While the statistic ``g`` is at or below the threshold ``e`` it accumulates
``max(0, g + stat - q)``.  The step after it crosses ``e`` restarts from
zero (``g = stat - q``, no floor), so a single large error keeps the
detector triggered only as long as each new statistic alone exceeds
``e + q``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

__all__ = ["CusumState", "update", "trigger_step"]


@dataclass(frozen=True)
class CusumState:
    q: float
    e: float
    g: float = 0.0
    triggered: bool = False

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError(f"tolerance q must be > 0, got {self.q!r}")
        if not self.e > 0:
            raise ValueError(f"threshold e must be > 0, got {self.e!r}")

    def reset(self) -> "CusumState":
        return replace(self, g=0.0, triggered=False)


def update(state: CusumState, stat: float) -> CusumState:
    if not math.isfinite(stat):
        raise ValueError(f"CUSUM statistic must be finite, got {stat!r}")
    if state.g <= state.e:
        g = max(0.0, state.g + stat - state.q)
    else:
        g = stat - state.q
    return replace(state, g=g, triggered=g > state.e)


def trigger_step(stat: float, q: float, e: float) -> int:
    """Steps from ``g = 0`` until a constant ``stat > q`` first triggers.

    The trigger needs ``k (stat - q) > e``, i.e. ``k = floor(e/(stat-q)) + 1``,
    which equals ``ceil(e/(stat-q))`` unless the ratio is an exact integer.
    """
    if not stat > q:
        raise ValueError("a constant statistic at or below q never triggers")
    return math.floor(e / (stat - q)) + 1
