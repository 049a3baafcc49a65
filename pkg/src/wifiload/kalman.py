"""Extended Kalman filter on the number of stations.

The state is the (real-valued) station count; the measurement is a window
estimate of the collision probability, related to the state through
``h = collision_of_users``.  ``h`` and its slope are evaluated numerically at
every step, which dominates the cost of the filter.

Process noise switches between ``q_minus`` (stable) and ``q_plus`` (after a
detected change).  The detector is a CUSUM fed with the squared innovation
normalised by its predicted variance; it sees step ``t``'s innovation and
selects the noise used at step ``t + 1``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional

from .bianchi import (
    INVERT_TOL,
    P_FLOOR,
    SLOPE_STEP,
    ConvergenceError,
    ProtocolParams,
    clamp_probability,
    collision_of_users,
    collision_slope,
    P_MAX,
    users_of_p,
)
from .cusum import CusumState, update

__all__ = ["EstimatorError", "KfConfig", "KfState", "KfTrace", "kf_init", "kf_run", "kf_step"]


class EstimatorError(RuntimeError):
    """A step produced a non-finite value or the model inversion failed."""

    def __init__(self, message: str, slot: Optional[int] = None):
        self.slot = slot
        if slot is not None:
            message = f"slot {slot}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class KfConfig:
    q_plus: float = 4.0
    q_minus: float = 0.0
    n0: Optional[float] = None
    v0: float = 4.0
    k_all: int = 100
    cusum_q: float = 2.0
    cusum_e: float = 20.0
    slope_step: float = SLOPE_STEP
    invert_tol: float = INVERT_TOL

    def __post_init__(self):
        if not self.q_plus >= self.q_minus >= 0:
            raise ValueError("need q_plus >= q_minus >= 0")
        if self.n0 is not None and not self.n0 >= 1:
            raise ValueError("n0 must be >= 1")
        if not self.v0 > 0:
            raise ValueError("v0 must be > 0")
        if self.k_all < 1:
            raise ValueError("k_all must be >= 1")


@dataclass(frozen=True)
class KfState:
    n_est: float
    v: float
    cusum: CusumState
    last_innovation: float = 0.0
    last_gain: float = 0.0
    last_q: float = 0.0

    @property
    def changed(self) -> bool:
        return self.cusum.triggered


@functools.lru_cache(maxsize=32)
def n_ceiling(params: ProtocolParams) -> float:
    """Largest count the model can invert, ``users_of_p(P_MAX)``."""
    return users_of_p(P_MAX, params)


def kf_init(p_hat0: float, cfg: KfConfig, params: ProtocolParams) -> KfState:
    """Start from ``cfg.n0`` or, if unset, from the first measurement."""
    n0 = cfg.n0 if cfg.n0 is not None else users_of_p(p_hat0, params, lenient=True)
    return KfState(n_est=max(1.0, n0), v=cfg.v0, cusum=CusumState(q=cfg.cusum_q, e=cfg.cusum_e))


def kf_step(state: KfState, p_hat: float, cfg: KfConfig, params: ProtocolParams) -> KfState:
    p_hat = clamp_probability(p_hat)
    n = state.n_est
    h_prev = collision_of_users(n, params, cfg.invert_tol)
    hp = collision_slope(n, params, cfg.slope_step, cfg.invert_tol)
    z = p_hat - h_prev
    # h(1) = 0 would give R = 0 and collapse V; floor R at the clamp level
    h_r = max(h_prev, P_FLOOR)
    r = (1.0 - h_r) * h_r / cfg.k_all
    q = cfg.q_plus if state.cusum.triggered else cfg.q_minus
    prior = state.v + q
    s = hp * hp * prior + r
    gain = hp * prior / s
    n_new = min(max(1.0, n + gain * z), n_ceiling(params))
    v_new = (1.0 - gain * hp) * prior
    stat = z * z / s
    for name, value in (("h", h_prev), ("h'", hp), ("gain", gain), ("n", n_new), ("V", v_new)):
        if not math.isfinite(value):
            raise EstimatorError(f"non-finite {name} ({value!r}) at n_est={n!r}, p_hat={p_hat!r}")
    return KfState(
        n_est=n_new,
        v=v_new,
        cusum=update(state.cusum, stat),
        last_innovation=z,
        last_gain=gain,
        last_q=q,
    )


@dataclass
class KfTrace:
    n_est: List[float] = field(default_factory=list)
    v: List[float] = field(default_factory=list)
    innovation: List[float] = field(default_factory=list)
    gain: List[float] = field(default_factory=list)
    g: List[float] = field(default_factory=list)
    changed: List[bool] = field(default_factory=list)
    q: List[float] = field(default_factory=list)

    def append(self, st: KfState) -> None:
        self.n_est.append(st.n_est)
        self.v.append(st.v)
        self.innovation.append(st.last_innovation)
        self.gain.append(st.last_gain)
        self.g.append(st.cusum.g)
        self.changed.append(st.cusum.triggered)
        self.q.append(st.last_q)

    def __len__(self) -> int:
        return len(self.n_est)


def kf_run(p_hats: Iterable[float], cfg: KfConfig, params: ProtocolParams) -> KfTrace:
    """Fold :func:`kf_step` over a measurement stream.

    ``p_hats`` may hold floats or objects with a ``p_hat`` attribute.
    """
    trace = KfTrace()
    state = None
    for t, item in enumerate(p_hats):
        p = getattr(item, "p_hat", item)
        if state is None:
            state = kf_init(p, cfg, params)
        try:
            state = kf_step(state, p, cfg, params)
        except EstimatorError as exc:
            raise EstimatorError(str(exc), slot=t) from exc
        except (ValueError, ArithmeticError, ConvergenceError) as exc:
            raise EstimatorError(f"model evaluation failed: {exc}", slot=t) from exc
        trace.append(state)
    if state is None:
        raise ValueError("measurement stream is empty")
    return trace
