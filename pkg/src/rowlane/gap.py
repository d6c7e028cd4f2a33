"""Gap acceptance for the merging vehicle: direct, negotiated or rejected."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from rowlane.envelope import (
    DomainError,
    KinematicParams,
    forbidden_distance,
    negotiable_boundary,
)


@dataclass(slots=True)
class VehicleState:
    """Longitudinal/lateral state of one vehicle.

    ``x`` is the front-bumper position along the road and ``y_frac`` the
    lane-change progress (0 = original lane, 1 = target lane).
    """

    id: int
    lane: int
    x: float
    v: float
    a: float = 0.0
    y_frac: float = 0.0
    is_human: bool = True


class GapDecision(enum.Enum):
    DIRECT_ACCEPT = "direct"
    NEGOTIATED_ACCEPT = "negotiated"
    REJECT = "reject"


@dataclass(frozen=True)
class GapContext:
    """The merging vehicle and its (optional) neighbours, with bumper gaps to each.

    A missing neighbour means the corresponding distance is unbounded.
    """

    ego: VehicleState
    l1: VehicleState | None = None
    l2: VehicleState | None = None
    f2: VehicleState | None = None
    d_ego_l1: float = math.inf
    d_ego_l2: float = math.inf
    d_ego_f2: float = math.inf

    @classmethod
    def from_vehicles(cls, ego, l1=None, l2=None, f2=None, l_v: float = 5.0) -> GapContext:
        """Build a context from front-bumper positions."""
        return cls(
            ego=ego,
            l1=l1,
            l2=l2,
            f2=f2,
            d_ego_l1=math.inf if l1 is None else l1.x - l_v - ego.x,
            d_ego_l2=math.inf if l2 is None else l2.x - l_v - ego.x,
            d_ego_f2=math.inf if f2 is None else ego.x - l_v - f2.x,
        )

    @property
    def gap_id(self) -> tuple[int | None, int | None]:
        return (
            None if self.l2 is None else self.l2.id,
            None if self.f2 is None else self.f2.id,
        )


@dataclass(frozen=True)
class GapThresholds:
    """Distances the merging vehicle must respect for one gap context."""

    l1: float
    l2: float
    f2_forbidden: float
    f2_boundary: float


def gap_thresholds(ctx: GapContext, params: KinematicParams) -> GapThresholds:
    v = ctx.ego.v
    l1 = 0.0 if ctx.l1 is None else forbidden_distance(v, ctx.l1.v, params.rho, params)
    l2 = 0.0 if ctx.l2 is None else forbidden_distance(v, ctx.l2.v, params.rho, params)
    if ctx.f2 is None:
        return GapThresholds(l1, l2, 0.0, 0.0)
    return GapThresholds(
        l1,
        l2,
        forbidden_distance(ctx.f2.v, v, params.rho_human, params),
        negotiable_boundary(ctx.f2.v, v, params),
    )


def _validate(ctx: GapContext) -> None:
    for name in ("l1", "l2", "f2"):
        vehicle = getattr(ctx, name)
        gap = getattr(ctx, f"d_ego_{name}")
        if vehicle is not None and not (gap >= 0 and math.isfinite(gap)):
            raise DomainError(f"gap to {name} must be a finite non-negative distance, got {gap!r}")
        if vehicle is None and gap != math.inf:
            raise DomainError(f"gap to absent {name} must be unbounded")
    if ctx.ego.y_frac != 0.0:
        raise DomainError("gap acceptance is evaluated from the original lane only")


def classify_gap(ctx: GapContext, params: KinematicParams) -> GapDecision:
    """Direct when the whole right-of-way area of the target follower is clear,
    negotiated when only its negotiable part is occupied, otherwise reject.

    A gap exactly at the negotiable boundary counts as direct; one exactly at
    the forbidden boundary counts as negotiated.
    """
    _validate(ctx)
    if ctx.f2 is not None and ctx.f2.a > 0:
        return GapDecision.REJECT
    if ctx.l1 is not None and ctx.l1.a < 0:
        return GapDecision.REJECT
    if ctx.l2 is not None and ctx.l2.a < 0:
        return GapDecision.REJECT
    th = gap_thresholds(ctx, params)
    if ctx.d_ego_l1 < th.l1 or ctx.d_ego_l2 < th.l2:
        return GapDecision.REJECT
    if ctx.d_ego_f2 >= th.f2_boundary:
        return GapDecision.DIRECT_ACCEPT
    if ctx.d_ego_f2 >= th.f2_forbidden:
        return GapDecision.NEGOTIATED_ACCEPT
    return GapDecision.REJECT


def rss_classify_gap(ctx: GapContext, params: KinematicParams) -> GapDecision:
    """Same test without a negotiation stage: the negotiable band is a rejection."""
    decision = classify_gap(ctx, params)
    if decision is GapDecision.NEGOTIATED_ACCEPT:
        return GapDecision.REJECT
    return decision
