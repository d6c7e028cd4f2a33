"""Right-of-way lane-change simulator with negotiated gap acceptance and an RSS baseline."""

from rowlane.envelope import (
    DomainError,
    EnvelopeResult,
    KinematicParams,
    braking_capacity,
    braking_oracle,
    elude_time,
    envelope_pair,
    forbidden_distance,
    negotiable_boundary,
)
from rowlane.gap import GapContext, GapDecision, VehicleState, classify_gap, rss_classify_gap

__all__ = [
    "DomainError",
    "EnvelopeResult",
    "GapContext",
    "GapDecision",
    "KinematicParams",
    "VehicleState",
    "braking_capacity",
    "braking_oracle",
    "classify_gap",
    "elude_time",
    "envelope_pair",
    "forbidden_distance",
    "negotiable_boundary",
    "rss_classify_gap",
]

__version__ = "0.1.0"
