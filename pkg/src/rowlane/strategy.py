"""Three-stage lane-change state machine, its RSS counterpart, and failure handling.

The machine is a value: step functions take a :class:`DlcProcess` and return
a new one plus a :class:`Directive` telling the vehicle what to do next.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from rowlane.envelope import DomainError, KinematicParams
from rowlane.gap import GapContext, GapDecision, classify_gap, rss_classify_gap

NEGOTIATION_WINDOW = 3.0


class ProtocolError(RuntimeError):
    """A protocol message or event arrived in a stage that cannot accept it."""


class Stage(enum.Enum):
    ADJUSTING = "adjusting"
    NEGOTIATING = "negotiating"
    ACTING = "acting"
    COMPLETED = "completed"
    ABORTED = "aborted"


class NegotiationResponse(enum.Enum):
    CONSENT = "consent"
    REJECT = "reject"
    NO_RESPONSE = "no_response"


class Owner(enum.Enum):
    F2 = "f2"
    EGO = "ego"


class Directive(enum.Enum):
    ADJUST = "adjust"
    REQUEST_MERGE = "request_merge"
    AWAIT_RESPONSE = "await_response"
    CHANGE_LANE = "change_lane"
    DONE = "done"
    ABORT = "abort"


class FailureReaction(enum.Enum):
    ABORT_BEFORE_ENTRY = "abort_before_entry"
    ACCELERATE_AND_COMPLETE = "accelerate_and_complete"
    RETURN_TO_ORIGINAL = "return_to_original"


class PrecedenceClass(enum.Enum):
    EGO_HIGHER = "ego_higher"
    EGO_LOWER = "ego_lower"
    FCFS = "fcfs"


@dataclass(frozen=True)
class DlcProcess:
    """Stage of the merging vehicle plus negotiation bookkeeping.

    ``stage_time`` is the request time while negotiating and the start time
    while acting. Gaps in ``forbidden_gaps`` had their request rejected, so
    their negotiable area now counts as forbidden.
    """

    stage: Stage = Stage.ADJUSTING
    stage_time: float | None = None
    negotiation_deadline: float | None = None
    owner_of_negotiable: Owner = Owner.F2
    gap_id: tuple | None = None
    forbidden_gaps: frozenset = field(default_factory=frozenset)

    def with_forbidden(self, gap_id) -> DlcProcess:
        return replace(self, forbidden_gaps=self.forbidden_gaps | {gap_id})


def _decide(ctx: GapContext, proc: DlcProcess, params: KinematicParams) -> GapDecision:
    decision = classify_gap(ctx, params)
    if decision is GapDecision.NEGOTIATED_ACCEPT and ctx.gap_id in proc.forbidden_gaps:
        return GapDecision.REJECT
    return decision


def _start_acting(proc: DlcProcess, ctx: GapContext, now: float, owner: Owner) -> DlcProcess:
    return replace(
        proc,
        stage=Stage.ACTING,
        stage_time=now,
        negotiation_deadline=None,
        owner_of_negotiable=owner,
        gap_id=ctx.gap_id,
    )


def _adjusting(proc: DlcProcess) -> DlcProcess:
    return replace(
        proc,
        stage=Stage.ADJUSTING,
        stage_time=None,
        negotiation_deadline=None,
        owner_of_negotiable=Owner.F2,
        gap_id=None,
    )


def _finish_or_continue(proc: DlcProcess, lateral_done: bool):
    if lateral_done:
        return replace(proc, stage=Stage.COMPLETED), Directive.DONE
    return proc, Directive.CHANGE_LANE


def dlc_step(
    proc: DlcProcess,
    ctx: GapContext,
    response: NegotiationResponse | None,
    now: float,
    params: KinematicParams,
    lateral_done: bool = False,
) -> tuple[DlcProcess, Directive]:
    """Advance the negotiated strategy by one decision.

    ``response`` is the target-lane follower's answer, if one arrived this
    step; silence at the deadline counts as acquiescence. Before acting on
    a consent the gap is re-checked, since the traffic may have moved during
    the wait.
    """
    if response is not None and proc.stage is not Stage.NEGOTIATING:
        raise ProtocolError(f"response {response.value} received while {proc.stage.value}")

    if proc.stage is Stage.ADJUSTING:
        decision = _decide(ctx, proc, params)
        if decision is GapDecision.DIRECT_ACCEPT:
            return _start_acting(proc, ctx, now, Owner.F2), Directive.CHANGE_LANE
        if decision is GapDecision.NEGOTIATED_ACCEPT:
            negotiating = replace(
                proc,
                stage=Stage.NEGOTIATING,
                stage_time=now,
                negotiation_deadline=now + NEGOTIATION_WINDOW,
                gap_id=ctx.gap_id,
            )
            return negotiating, Directive.REQUEST_MERGE
        return proc, Directive.ADJUST

    if proc.stage is Stage.NEGOTIATING:
        if response is NegotiationResponse.REJECT:
            return _adjusting(proc.with_forbidden(proc.gap_id)), Directive.ADJUST
        at_deadline = now >= proc.negotiation_deadline - 1e-9
        granted = response is NegotiationResponse.CONSENT or (
            at_deadline and response in (None, NegotiationResponse.NO_RESPONSE)
        )
        if not granted:
            return proc, Directive.AWAIT_RESPONSE
        # consent covers the negotiable area only; the forbidden area still binds
        if classify_gap(ctx, params) is GapDecision.REJECT or ctx.gap_id != proc.gap_id:
            return _adjusting(proc), Directive.ADJUST
        return _start_acting(proc, ctx, now, Owner.EGO), Directive.CHANGE_LANE

    if proc.stage is Stage.ACTING:
        return _finish_or_continue(proc, lateral_done)

    if proc.stage is Stage.COMPLETED:
        return proc, Directive.DONE
    return proc, Directive.ABORT


def rss_step(
    proc: DlcProcess,
    ctx: GapContext,
    now: float,
    params: KinematicParams,
    lateral_done: bool = False,
) -> tuple[DlcProcess, Directive]:
    """The RSS baseline: merge only into directly acceptable gaps, never negotiate."""
    if proc.stage is Stage.ADJUSTING:
        if rss_classify_gap(ctx, params) is GapDecision.DIRECT_ACCEPT:
            return _start_acting(proc, ctx, now, Owner.F2), Directive.CHANGE_LANE
        return proc, Directive.ADJUST
    if proc.stage is Stage.NEGOTIATING:
        raise ProtocolError("the RSS strategy has no negotiation stage")
    if proc.stage is Stage.ACTING:
        return _finish_or_continue(proc, lateral_done)
    if proc.stage is Stage.COMPLETED:
        return proc, Directive.DONE
    return proc, Directive.ABORT


def abort(proc: DlcProcess, now: float) -> DlcProcess:
    return replace(proc, stage=Stage.ABORTED, stage_time=now, owner_of_negotiable=Owner.F2)


def failure_reaction(
    proc: DlcProcess, entered_target: bool, space_ahead_sufficient: bool
) -> FailureReaction:
    """How to respond when a neighbour breaks the agreed right-of-way assignment."""
    if proc.stage not in (Stage.ACTING, Stage.NEGOTIATING):
        raise ProtocolError(f"no merge in progress (stage {proc.stage.value})")
    if not entered_target:
        return FailureReaction.ABORT_BEFORE_ENTRY
    if space_ahead_sufficient:
        return FailureReaction.ACCELERATE_AND_COMPLETE
    return FailureReaction.RETURN_TO_ORIGINAL


def maneuver_precedence(maneuver_type: int) -> PrecedenceClass:
    """Unresolved precedence of the seven multi-vehicle merging maneuvers."""
    if isinstance(maneuver_type, bool) or not isinstance(maneuver_type, int):
        raise DomainError(f"maneuver type must be an integer, got {maneuver_type!r}")
    if not 1 <= maneuver_type <= 7:
        raise DomainError(f"maneuver type must be in 1..7, got {maneuver_type}")
    if maneuver_type <= 5:
        return PrecedenceClass.EGO_HIGHER
    if maneuver_type == 6:
        return PrecedenceClass.EGO_LOWER
    return PrecedenceClass.FCFS


def classify_precedence(
    maneuver_type: int, ego_intention_time: float, other_intention_time: float
) -> PrecedenceClass:
    """Right-of-way of the ego against another merging vehicle.

    Types 1-5 leave the ego with the stronger claim, type 6 obliges it to
    yield, and type 7 goes to whoever signalled first (ties yield).
    """
    basis = maneuver_precedence(maneuver_type)
    if basis is not PrecedenceClass.FCFS:
        return basis
    if ego_intention_time < other_intention_time:
        return PrecedenceClass.EGO_HIGHER
    return PrecedenceClass.EGO_LOWER
