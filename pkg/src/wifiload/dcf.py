"""Slot-level simulation of saturated 802.11 DCF stations.

Every station always has a frame queued.  Time advances in sub-frames: an
empty sub-frame when no counter is zero, otherwise a success (one station
at zero) or a collision (two or more).  Transmitters redraw their back-off
counter from the window of their new stage; every other station decrements
its counter once per sub-frame, which is the virtual-slot convention of
Bianchi's Markov chain.  ``freeze_on_busy=True`` selects the 802.11 rule of
decrementing only on empty sub-frames instead.

A passive observer counts the outcomes over windows of ``k_all``
sub-frames and turns them into a collision-probability measurement, see
:class:`MeasurementMode`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .bianchi import ProtocolParams, collision_of_busy, users_of_p

__all__ = [
    "DcfSimulator",
    "LoadSchedule",
    "Measurement",
    "MeasurementMode",
    "StationState",
    "SubframeOutcome",
    "measure",
    "run_schedule",
    "step_subframe",
]


class SubframeOutcome(enum.Enum):
    IDLE = "idle"
    SUCCESS = "success"
    COLLISION = "collision"


class MeasurementMode(enum.Enum):
    """How a window's counts become ``p_hat``.

    ``BUSY``
        ``(k_busy + k_coll) / k_all``, the non-empty share of the window.
    ``COLLISION_SHARE``
        ``k_coll / max(1, k_busy + k_coll)``.
    ``CONDITIONAL``
        The busy share mapped through ``collision_of_busy``, which turns the
        per-slot busy probability ``1 - (1 - tau)^n`` into the conditional
        collision probability ``1 - (1 - tau)^(n-1)`` that the estimators model.
    """

    BUSY = "busy"
    COLLISION_SHARE = "collision-share"
    CONDITIONAL = "conditional"


@dataclass
class StationState:
    stage: int = 0
    counter: int = 0


@dataclass(frozen=True)
class Measurement:
    k_busy: int
    k_coll: int
    k_all: int
    p_hat: float
    n_hat: float
    elapsed_us: float
    n_true: Optional[int] = None

    @property
    def k_idle(self) -> int:
        return self.k_all - self.k_busy - self.k_coll


@dataclass(frozen=True)
class LoadSchedule:
    """Piecewise-constant number of stations: ``(n, duration_slots)`` pairs."""

    segments: Tuple[Tuple[int, int], ...]

    def __init__(self, segments: Iterable[Sequence[int]]):
        segs = tuple((int(n), int(d)) for n, d in segments)
        if not segs:
            raise ValueError("schedule must contain at least one segment")
        for i, (n, d) in enumerate(segs):
            if n < 1:
                raise ValueError(f"segment {i}: n must be >= 1, got {n}")
            if d < 1:
                raise ValueError(f"segment {i}: duration must be > 0, got {d}")
        object.__setattr__(self, "segments", segs)

    @property
    def total_slots(self) -> int:
        return sum(d for _, d in self.segments)

    def boundaries(self) -> List[int]:
        """Start slot of every segment."""
        starts, t = [], 0
        for _, d in self.segments:
            starts.append(t)
            t += d
        return starts

    def true_counts(self) -> np.ndarray:
        return np.repeat([n for n, _ in self.segments], [d for _, d in self.segments])


def step_subframe(
    stations: List[StationState],
    rng: np.random.Generator,
    params: ProtocolParams,
    freeze_on_busy: bool = False,
) -> SubframeOutcome:
    """Advance ``stations`` in place by one sub-frame and return its outcome.

    This is the plain reference rule; :class:`DcfSimulator` implements the
    same transitions with idle-run skipping and consumes ``rng`` identically.
    """
    if not stations:
        raise ValueError("at least one station is required")
    tx = [s for s in stations if s.counter == 0]
    if not tx:
        for s in stations:
            s.counter -= 1
        return SubframeOutcome.IDLE
    if not freeze_on_busy:
        for s in stations:
            if s.counter > 0:
                s.counter -= 1
    collided = len(tx) > 1
    for s in tx:
        s.stage = min(s.stage + 1, params.m) if collided else 0
        s.counter = int(rng.integers(params.window(s.stage)))
    return SubframeOutcome.COLLISION if collided else SubframeOutcome.SUCCESS


def measure(
    k_busy: int,
    k_coll: int,
    k_all: int,
    params: ProtocolParams,
    mode: MeasurementMode = MeasurementMode.BUSY,
    n_true: Optional[int] = None,
) -> Measurement:
    """Build a :class:`Measurement` from window counts."""
    if k_all < 1:
        raise ValueError("k_all must be >= 1")
    if k_busy < 0 or k_coll < 0 or k_busy + k_coll > k_all:
        raise ValueError(f"inconsistent counts busy={k_busy} coll={k_coll} all={k_all}")
    mode = MeasurementMode(mode)
    if mode is MeasurementMode.BUSY:
        p_hat = (k_busy + k_coll) / k_all
    elif mode is MeasurementMode.COLLISION_SHARE:
        p_hat = k_coll / max(1, k_busy + k_coll)
    else:
        p_hat = collision_of_busy((k_busy + k_coll) / k_all, params)
    k_idle = k_all - k_busy - k_coll
    elapsed = k_busy * params.t_success + k_coll * params.t_collision + k_idle * params.t_idle
    return Measurement(
        k_busy=k_busy,
        k_coll=k_coll,
        k_all=k_all,
        p_hat=p_hat,
        n_hat=users_of_p(p_hat, params, lenient=True),
        elapsed_us=elapsed,
        n_true=n_true,
    )


class DcfSimulator:
    """``n`` saturated stations sharing one channel.

    Station 0 is the tagged station whose transmissions and collisions are
    counted in ``tagged_attempts`` / ``tagged_collisions``; ``attempts`` and
    ``collided_attempts`` aggregate over all stations.
    """

    def __init__(
        self,
        n: int,
        params: ProtocolParams = ProtocolParams(),
        seed: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
        freeze_on_busy: bool = False,
    ):
        if n < 1:
            raise ValueError(f"need at least one station, got n={n}")
        self.params = params
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.freeze_on_busy = freeze_on_busy
        self._stage: List[int] = []
        self._counter: List[int] = []
        self.subframes = 0
        self.attempts = 0
        self.collided_attempts = 0
        self.tagged_attempts = 0
        self.tagged_collisions = 0
        self.resize(n)

    @property
    def n(self) -> int:
        return len(self._stage)

    @property
    def stations(self) -> List[StationState]:
        return [StationState(s, c) for s, c in zip(self._stage, self._counter)]

    def resize(self, n: int) -> None:
        """Add fresh stage-0 stations or remove stations uniformly at random."""
        if n < 1:
            raise ValueError(f"need at least one station, got n={n}")
        while self.n < n:
            self._stage.append(0)
            self._counter.append(int(self.rng.integers(self.params.G)))
        while self.n > n:
            i = int(self.rng.integers(self.n))
            del self._stage[i]
            del self._counter[i]

    def step_subframe(self) -> SubframeOutcome:
        outcome, _ = self._advance(1)
        return outcome

    def _advance(self, limit: int) -> Tuple[SubframeOutcome, int]:
        """Run at most ``limit`` sub-frames, stopping after the first busy one.

        Returns the last outcome and the number of sub-frames consumed.
        """
        counter = self._counter
        k = min(counter)
        if k > 0:
            skip = min(k, limit)
            self._counter = [c - skip for c in counter]
            self.subframes += skip
            return SubframeOutcome.IDLE, skip
        stage = self._stage
        params = self.params
        tx = [i for i, c in enumerate(counter) if c == 0]
        if not self.freeze_on_busy:
            counter = self._counter = [c - 1 if c > 0 else 0 for c in counter]
        collided = len(tx) > 1
        for i in tx:
            s = min(stage[i] + 1, params.m) if collided else 0
            stage[i] = s
            counter[i] = int(self.rng.integers(params.G << s))
        self.subframes += 1
        self.attempts += len(tx)
        if collided:
            self.collided_attempts += len(tx)
        if tx[0] == 0:
            self.tagged_attempts += 1
            self.tagged_collisions += collided
        return (SubframeOutcome.COLLISION if collided else SubframeOutcome.SUCCESS), 1

    def count_window(self, k_all: int) -> Tuple[int, int]:
        """Advance ``k_all`` sub-frames and return ``(k_busy, k_coll)``."""
        if k_all < 1:
            raise ValueError("k_all must be >= 1")
        k_busy = k_coll = 0
        left = k_all
        while left:
            outcome, used = self._advance(left)
            left -= used
            if outcome is SubframeOutcome.SUCCESS:
                k_busy += 1
            elif outcome is SubframeOutcome.COLLISION:
                k_coll += 1
        return k_busy, k_coll

    def observe_window(
        self,
        k_all: int,
        mode: MeasurementMode = MeasurementMode.BUSY,
        n_true: Optional[int] = None,
    ) -> Measurement:
        k_busy, k_coll = self.count_window(k_all)
        return measure(k_busy, k_coll, k_all, self.params, mode, n_true)

    @property
    def collision_rate(self) -> float:
        """Share of all transmission attempts that collided."""
        return self.collided_attempts / self.attempts if self.attempts else 0.0

    @property
    def tagged_collision_rate(self) -> float:
        return self.tagged_collisions / self.tagged_attempts if self.tagged_attempts else 0.0


def run_schedule(
    schedule: LoadSchedule,
    k_all: int,
    seed: int,
    params: ProtocolParams = ProtocolParams(),
    mode: MeasurementMode = MeasurementMode.BUSY,
    freeze_on_busy: bool = False,
) -> List[Measurement]:
    """One measurement per decision slot, each tagged with the true ``n``."""
    if not isinstance(schedule, LoadSchedule):
        schedule = LoadSchedule(schedule)
    mode = MeasurementMode(mode)
    first_n = schedule.segments[0][0]
    sim = DcfSimulator(first_n, params, seed=seed, freeze_on_busy=freeze_on_busy)
    out: List[Measurement] = []
    for n, duration in schedule.segments:
        sim.resize(n)
        for _ in range(duration):
            out.append(sim.observe_window(k_all, mode, n_true=n))
    return out
