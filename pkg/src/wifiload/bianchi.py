"""Saturated 802.11 DCF relations between tau, P and the number of stations.

Notation follows Bianchi's saturation analysis:

* ``tau``: probability that a station transmits in a (virtual) slot,
* ``p``: conditional collision probability seen by a transmitting station,
* ``n``: number of contending stations.

``tau_of_p`` gives tau as a function of p for a back-off with initial window
``G`` and ``m`` doubling stages.  Substituting it into
``p = 1 - (1 - tau)**(n - 1)`` gives ``n = users_of_p(p)``, a strictly
increasing map that has no closed-form inverse, so ``collision_of_users``
inverts it by bisection and ``collision_slope`` differentiates the inverse
numerically.

All functions are pure and operate on plain floats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "P_FLOOR",
    "P_MAX",
    "ConvergenceError",
    "ModelPoint",
    "ProtocolParams",
    "busy_of_collision",
    "clamp_probability",
    "collision_of_busy",
    "collision_of_users",
    "collision_slope",
    "model_point",
    "tau_of_p",
    "users_of_p",
]

P_FLOOR = 1e-4
P_MAX = 0.999

INVERT_TOL = 1e-9
INVERT_MAX_ITER = 200
SLOPE_STEP = 1e-3


class ConvergenceError(RuntimeError):
    """Bisection failed to reach the requested residual."""


@dataclass(frozen=True)
class ProtocolParams:
    """WiFi MAC constants and sub-frame durations (microseconds)."""

    G: int = 32
    m: int = 3
    t_success: float = 192.58
    t_collision: float = 45.58
    t_idle: float = 20.0

    def __post_init__(self):
        if int(self.G) != self.G or self.G < 2:
            raise ValueError(f"G must be an integer >= 2, got {self.G!r}")
        if int(self.m) != self.m or self.m < 0:
            raise ValueError(f"m must be an integer >= 0, got {self.m!r}")
        for name in ("t_success", "t_collision", "t_idle"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value!r}")

    def window(self, stage: int) -> int:
        """Contention window size at back-off ``stage``."""
        return self.G << stage


@dataclass(frozen=True)
class ModelPoint:
    tau: float
    p: float
    n: float


def tau_of_p(p: float, params: ProtocolParams) -> float:
    """Per-slot transmission probability of a saturated station.

    The textbook expression ``2(1-2p) / ((1-2p)(G+1) + pG(1-(2p)^m))`` is
    0/0 at p = 1/2.  Factoring ``1-(2p)^m = (1-2p) * sum_{k<m} (2p)^k``
    removes the singularity exactly, so the same formula is used on both
    sides of 1/2 and returns ``4 / (2G + 2 + mG)`` at the midpoint.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"p must lie in [0, 1), got {p!r}")
    G, m = params.G, params.m
    geom = 0.0
    term = 1.0
    for _ in range(m):
        geom += term
        term *= 2.0 * p
    return 2.0 / ((G + 1) + p * G * geom)


def users_of_p(p: float, params: ProtocolParams, lenient: bool = False) -> float:
    """Number of contending stations that produces collision probability ``p``.

    In strict mode ``p`` must lie in the open interval (0, 1).  Estimators call
    this with ``lenient=True``, which clamps ``p`` to ``[P_FLOOR, P_MAX]``
    first so empty or saturated observation windows still map to a finite
    count.
    """
    if lenient:
        p = clamp_probability(p)
    elif not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p!r}")
    return _users(p, params)


def _users(p: float, params: ProtocolParams) -> float:
    # f(0) = 1 is the continuous extension; log1p keeps small p accurate
    if p == 0.0:
        return 1.0
    return 1.0 + math.log1p(-p) / math.log1p(-tau_of_p(p, params))


def clamp_probability(p: float, floor: float = P_FLOOR, ceil: float = P_MAX) -> float:
    if p != p:
        raise ValueError("probability is NaN")
    return min(max(p, floor), ceil)


def collision_of_users(
    n: float,
    params: ProtocolParams,
    tol: float = INVERT_TOL,
    max_iter: int = INVERT_MAX_ITER,
) -> float:
    """Invert :func:`users_of_p` by bisection on ``[0, P_MAX]``.

    Returns ``p`` with ``|users_of_p(p) - n| <= tol``.  ``n = 1`` maps to 0.
    Counts above ``users_of_p(P_MAX)`` (about 880 for G=32, m=3) are outside
    the bracket and raise ``ValueError``.
    """
    if not n >= 1.0:
        raise ValueError(f"n must be >= 1, got {n!r}")
    if n == 1.0:
        return 0.0
    lo, hi = 0.0, P_MAX
    f_hi = _users(hi, params) - n
    if f_hi < -tol:
        raise ValueError(f"n={n!r} exceeds the invertible range (max {f_hi + n:.1f})")
    if f_hi <= tol:
        return hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        resid = _users(mid, params) - n
        if abs(resid) <= tol:
            return mid
        if resid < 0.0:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError(
        f"bisection for n={n!r} stopped after {max_iter} iterations (residual {resid:.3e})"
    )


def collision_slope(
    n: float,
    params: ProtocolParams,
    delta: float = SLOPE_STEP,
    tol: float = INVERT_TOL,
) -> float:
    """Derivative of ``collision_of_users`` by central difference.

    Below ``1 + delta`` the backward point leaves the domain, so a forward
    difference is used there instead.
    """
    if n - delta >= 1.0:
        lo = collision_of_users(n - delta, params, tol)
        hi = collision_of_users(n + delta, params, tol)
        return (hi - lo) / (2.0 * delta)
    base = collision_of_users(n, params, tol)
    return (collision_of_users(n + delta, params, tol) - base) / delta


def model_point(n: float, params: ProtocolParams) -> ModelPoint:
    p = collision_of_users(n, params)
    return ModelPoint(tau=tau_of_p(p, params), p=p, n=n)


def busy_of_collision(p: float, params: ProtocolParams) -> float:
    """Fraction of non-idle slots when stations see collision probability ``p``.

    With ``1 - p = (1 - tau)^(n-1)`` the idle probability ``(1 - tau)^n``
    is ``(1 - p)(1 - tau)``, which removes ``n`` from the relation.
    """
    return 1.0 - (1.0 - p) * (1.0 - tau_of_p(p, params))


def collision_of_busy(
    busy: float,
    params: ProtocolParams,
    tol: float = 1e-12,
    max_iter: int = INVERT_MAX_ITER,
) -> float:
    """Inverse of :func:`busy_of_collision`, clamped to ``[0, P_MAX]``.

    A busy fraction below ``tau(0) = 2/(G+1)`` (fewer transmissions than a
    lone station produces) maps to 0.
    """
    if busy != busy:
        raise ValueError("busy fraction is NaN")
    if busy <= busy_of_collision(0.0, params):
        return 0.0
    if busy >= busy_of_collision(P_MAX, params):
        return P_MAX
    lo, hi = 0.0, P_MAX
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if busy_of_collision(mid, params) < busy:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)
