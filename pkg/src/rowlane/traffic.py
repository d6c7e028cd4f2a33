"""Seeded target-lane fleets with log-normal headways.

Random streams come from numpy's counter-based Philox generator. Trial ``i``
of a run seeded with ``seed`` draws from key ``seed ^ i``; independent
purposes within a trial (fleet, original lane, negotiation answers, failure
parameters) are separate spawn keys of that stream, so adding draws for one
purpose never shifts another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rowlane.envelope import DomainError, KinematicParams
from rowlane.gap import VehicleState

RNG_ID = "numpy-Philox4x64:SeedSequence(seed^trial;purpose)"

_MASK64 = (1 << 64) - 1

# spawn keys for the independent streams of one trial
FLEET = 0
ORIGINAL_LANE = 1
NEGOTIATION = 2
FAILURE = 3


def make_rng(seed: int, trial: int = 0, purpose: int = FLEET) -> np.random.Generator:
    entropy = (int(seed) ^ int(trial)) & _MASK64
    seq = np.random.SeedSequence(entropy, spawn_key=(purpose,))
    return np.random.Generator(np.random.Philox(seq))


def mu_from_lambda(lambda_flow: float, sigma: float) -> float:
    """Log-normal location that makes the mean headway equal 3600/lambda seconds."""
    if lambda_flow <= 0:
        raise DomainError("traffic flow must be positive")
    return math.log(3600.0 / lambda_flow) - sigma * sigma / 2.0


@dataclass(frozen=True)
class TrafficConfig:
    lambda_flow: float
    sigma: float = 0.8
    v_l2_mean: float = 20.0
    seed: int = 0
    n_vehicles: int = 200

    def __post_init__(self) -> None:
        if self.lambda_flow <= 0:
            raise DomainError("traffic flow must be positive")
        if self.sigma <= 0:
            raise DomainError("sigma must be positive")

    @property
    def mu(self) -> float:
        return mu_from_lambda(self.lambda_flow, self.sigma)


def sample_headways(
    cfg: TrafficConfig, n: int, rng: np.random.Generator | None = None
) -> np.ndarray:
    if n <= 0:
        raise DomainError("need at least one headway")
    if rng is None:
        rng = make_rng(cfg.seed)
    return np.exp(cfg.mu + cfg.sigma * rng.standard_normal(n))


def physical_headways(
    cfg: TrafficConfig,
    n: int,
    params: KinematicParams,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Headways whose spacing at fleet speed exceeds one vehicle length.

    Draws that would make vehicles overlap are replaced by fresh draws from
    the same distribution, leaving the shape above the floor untouched.
    """
    if rng is None:
        rng = make_rng(cfg.seed)
    h = sample_headways(cfg, n, rng)
    floor = params.l_v / cfg.v_l2_mean
    bad = np.flatnonzero(h <= floor)
    while bad.size:
        h[bad] = sample_headways(cfg, bad.size, rng)
        bad = bad[h[bad] <= floor]
    return h


def build_fleet(
    cfg: TrafficConfig,
    params: KinematicParams | None = None,
    rng: np.random.Generator | None = None,
    lead_x: float = 0.0,
    lane: int = 1,
    first_id: int = 1,
    headways=None,
) -> list[VehicleState]:
    """Vehicles ordered front to back, all at the fleet speed and not accelerating.

    Consecutive front bumpers are ``h * v_l2_mean`` apart. Pass ``headways``
    to lay out a fixed sequence instead of sampling one.
    """
    params = params or KinematicParams()
    if cfg.n_vehicles <= 0:
        return []
    if headways is None:
        h = physical_headways(cfg, max(cfg.n_vehicles - 1, 1), params, rng)
    else:
        h = np.asarray(headways, dtype=float)
        if h.size < cfg.n_vehicles - 1 or np.any(h * cfg.v_l2_mean <= params.l_v):
            raise DomainError("headways must cover the fleet and keep vehicles apart")
    offsets = np.concatenate(([0.0], np.cumsum(h[: cfg.n_vehicles - 1] * cfg.v_l2_mean)))
    xs = lead_x - offsets
    return [
        VehicleState(id=first_id + i, lane=lane, x=float(x), v=cfg.v_l2_mean)
        for i, x in enumerate(xs)
    ]
