"""Right-of-way distances between two vehicles sharing a lane.

All distances are bumper-to-bumper gaps in metres. Vehicle length only
enters when the simulator converts front-bumper positions into gaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# speeds produced by float integration may overshoot the limits by a few ulps
_SPEED_EPS = 1e-9


class DomainError(ValueError):
    """An input lies outside the range where a formula is defined."""


@dataclass(frozen=True)
class KinematicParams:
    """Vehicle and road constants shared by every vehicle (identical dynamics).

    Defaults are the desk-scale simulation settings: 5 m vehicles, 2 m/s^2
    acceleration, braking between 2 and 6 m/s^2, 0.1 s AV lag, 1 s human lag
    and a 30 m/s lane speed limit.
    """

    a_max_accel: float = 2.0
    a_min_brake: float = 2.0
    a_max_brake: float = 6.0
    rho: float = 0.1
    rho_human: float = 1.0
    v_max: float = 30.0
    l_v: float = 5.0

    def __post_init__(self) -> None:
        if not 0 < self.a_min_brake <= self.a_max_brake:
            raise DomainError("need 0 < a_min_brake <= a_max_brake")
        if self.a_max_accel <= 0:
            raise DomainError("a_max_accel must be positive")
        if not 0 < self.rho <= self.rho_human:
            raise DomainError("need 0 < rho <= rho_human")
        if self.v_max <= 0:
            raise DomainError("v_max must be positive")
        if self.l_v <= 0:
            raise DomainError("l_v must be positive")


@dataclass(frozen=True)
class EnvelopeResult:
    forbidden_len: float
    negotiable_len: float


def _check_speed(v: float, params: KinematicParams, name: str = "speed") -> float:
    if not (-_SPEED_EPS <= v <= params.v_max + _SPEED_EPS):
        raise DomainError(f"{name}={v!r} outside [0, {params.v_max}]")
    return min(max(v, 0.0), params.v_max)


def braking_capacity(v: float, params: KinematicParams) -> float:
    """Deceleration a follower at speed ``v`` is guaranteed to apply.

    Interpolates linearly from ``a_min_brake`` at standstill to
    ``a_max_brake`` at the speed limit.
    """
    v = _check_speed(v, params)
    return params.a_min_brake + v / params.v_max * (params.a_max_brake - params.a_min_brake)


def forbidden_distance(
    v_follower: float, v_leader: float, lag: float, params: KinematicParams
) -> float:
    """Length of the area behind a leader that its follower must never enter.

    If the leader brakes at ``a_max_brake`` to standstill, a follower that
    holds speed for ``lag`` seconds and then brakes at its braking capacity
    stops exactly at the leader's bumper.
    """
    v_f = _check_speed(v_follower, params, "v_follower")
    v_l = _check_speed(v_leader, params, "v_leader")
    if lag < 0:
        raise DomainError("lag must be non-negative")
    if v_f == 0.0:
        return 0.0
    raw = v_f * lag + v_f * v_f / (2.0 * braking_capacity(v_f, params)) - v_l * v_l / (
        2.0 * params.a_max_brake
    )
    return max(raw, 0.0)


def negotiable_boundary(v_f2: float, v_ego: float, params: KinematicParams) -> float:
    """Gap at which a human follower needs no cooperation to stay clear.

    The follower keeps accelerating at ``a_max_accel`` through its human
    reaction lag and then brakes only at ``a_min_brake``; the merging
    vehicle in front brakes at ``a_max_brake``.
    """
    v_f2 = _check_speed(v_f2, params, "v_f2")
    v_ego = _check_speed(v_ego, params, "v_ego")
    lag = params.rho_human
    acc = params.a_max_accel
    v_reacted = v_f2 + acc * lag
    raw = (
        v_f2 * lag
        + acc * lag * lag / 2.0
        + v_reacted * v_reacted / (2.0 * params.a_min_brake)
        - v_ego * v_ego / (2.0 * params.a_max_brake)
    )
    return max(raw, 0.0)


def envelope_pair(v_f2: float, v_ego: float, params: KinematicParams) -> EnvelopeResult:
    """Split the area ahead of the target-lane follower into forbidden and negotiable parts."""
    forbidden = forbidden_distance(v_f2, v_ego, params.rho_human, params)
    boundary = negotiable_boundary(v_f2, v_ego, params)
    return EnvelopeResult(forbidden, max(boundary - forbidden, 0.0))


def elude_time(
    v_ego: float,
    v_f2: float,
    t_merging: float,
    forbidden_len: float,
    a_accel: float | None = None,
    params: KinematicParams | None = None,
) -> float:
    """Time left to abort a merge after the target-lane follower starts accelerating.

    ``t_merging`` is how long the lane change had been running when the
    acceleration began. ``a_accel`` defaults to ``a_max_accel``. A negative
    radicand or a result below zero both collapse to 0 (return at once).
    """
    params = params or KinematicParams()
    if a_accel is None:
        a_accel = params.a_max_accel
    if a_accel <= 0:
        raise DomainError("a_accel must be positive")
    if t_merging < 0:
        raise DomainError("t_merging must be non-negative")
    radicand = ((v_ego - v_f2) * t_merging + forbidden_len) / a_accel
    return max(math.sqrt(max(radicand, 0.0)) - params.rho, 0.0)


# -- brute-force kinematic oracles ---------------------------------------------

ORACLE_DT = 1e-3


def _move(x, v, a, d):
    """Advance under constant acceleration ``a`` for ``d`` seconds, stopping at v=0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        stops = (a < 0) & (v + a * d <= 0)
        dx = np.where(stops, v * v / np.where(a < 0, -2.0 * a, 1.0), v * d + 0.5 * a * d * d)
    v_new = np.where(stops, 0.0, v + a * d)
    return x + dx, v_new


def _two_phase(x, v, t, dt, t_switch, a_first, a_second):
    """One integration step for a vehicle whose acceleration switches at ``t_switch``."""
    d1 = np.clip(t_switch - t, 0.0, dt)
    x, v = _move(x, v, a_first, d1)
    return _move(x, v, a_second, dt - d1)


def _min_gap(v_follower, v_leader, initial_gap, t_switch, a_first, a_second, a_leader, dt):
    v_f = np.asarray(v_follower, dtype=float)
    v_l = np.asarray(v_leader, dtype=float)
    gap0 = np.asarray(initial_gap, dtype=float)
    v_f, v_l, gap0, t_switch, a_first, a_second = np.broadcast_arrays(
        v_f, v_l, gap0, t_switch, a_first, a_second
    )
    x_f = np.zeros(v_f.shape)
    x_l = np.zeros(v_f.shape)
    v_f = v_f.copy()
    v_l = v_l.copy()
    lowest = gap0.copy()
    t = 0.0
    while np.any(v_f > 0) or np.any(v_l > 0):
        x_f, v_f = _two_phase(x_f, v_f, t, dt, t_switch, a_first, a_second)
        x_l, v_l = _move(x_l, v_l, -a_leader, dt)
        t += dt
        np.minimum(lowest, gap0 + x_l - x_f, out=lowest)
    return lowest


def braking_oracle(
    v_follower,
    v_leader,
    lag,
    initial_gap,
    params: KinematicParams,
    dt: float = ORACLE_DT,
):
    """Smallest bumper gap when the leader brakes at full strength from t=0.

    The follower holds its speed for ``lag`` seconds and then brakes at
    ``braking_capacity(v_follower)`` to standstill. Inputs broadcast, so a
    whole batch of scenarios integrates in one pass. Returns a float for
    scalar inputs.
    """
    v_f = np.asarray(v_follower, dtype=float)
    capacity = params.a_min_brake + np.clip(v_f, 0, params.v_max) / params.v_max * (
        params.a_max_brake - params.a_min_brake
    )
    out = _min_gap(
        v_f, v_leader, initial_gap, np.asarray(lag, dtype=float), 0.0, -capacity,
        params.a_max_brake, dt,
    )
    return float(out) if out.ndim == 0 else out


def boundary_oracle(v_f2, v_ego, initial_gap, params: KinematicParams, dt: float = ORACLE_DT):
    """Smallest gap when the follower accelerates through its human lag, then brakes softly.

    The follower accelerates at ``a_max_accel`` for ``rho_human`` seconds and
    then brakes at ``a_min_brake``; the vehicle ahead brakes at
    ``a_max_brake`` from t=0.
    """
    out = _min_gap(
        v_f2, v_ego, initial_gap, params.rho_human, params.a_max_accel, -params.a_min_brake,
        params.a_max_brake, dt,
    )
    return float(out) if out.ndim == 0 else out
