"""Fixed-step two-lane world: one merging AV, an original-lane pair, a target-lane fleet.

Longitudinal and lateral motion are integrated independently. Non-ego
vehicles keep out of their leader's forbidden area and otherwise track a
desired speed; the ego is driven by its lane-change strategy through
:class:`Trial`.

Positions are stored in a frame moving at ``frame_speed`` so that fleet
vehicles cruising at that speed need no update at all; only vehicles that
are accelerating, off the cruise speed or next to the ego are stepped.
``WorldState.absolute_x`` converts back to road coordinates.
"""

from __future__ import annotations

import enum
import json
import math

import numpy as np
from dataclasses import dataclass, field, replace

from rowlane.envelope import (
    KinematicParams,
    braking_capacity,
    elude_time,
    forbidden_distance,
    negotiable_boundary,
)
from rowlane.gap import GapContext, GapDecision, VehicleState, classify_gap, gap_thresholds
from rowlane.strategy import (
    DlcProcess,
    Directive,
    FailureReaction,
    NegotiationResponse,
    Owner,
    Stage,
    abort,
    dlc_step,
    failure_reaction,
    rss_step,
)
from rowlane.traffic import (
    FAILURE,
    FLEET,
    NEGOTIATION,
    ORIGINAL_LANE,
    RNG_ID,
    TrafficConfig,
    make_rng,
    physical_headways,
)

DT = 0.1
ORIGINAL = 0
TARGET = 1
EGO_ID = 0
L1_ID = -1
F1_ID = -2
FLEET_BLOCK = 64


class Strategy(enum.Enum):
    NEW = "new"
    RSS = "rss"


class Outcome(enum.Enum):
    STATE1 = "State1"
    STATE2 = "State2"
    STATE3 = "State3"


class Mode(enum.Enum):
    CRUISE = "cruise"
    PULSE = "pulse"
    FAILING = "failing"


@dataclass(slots=True)
class SimVehicle(VehicleState):
    v_des: float = 0.0
    mode: Mode = Mode.CRUISE
    mode_until: float = 0.0
    mode_accel: float = 0.0


@dataclass(frozen=True)
class SimConfig:
    """Engine knobs that the experiments do not vary.

    ``t_lc`` is the duration of the lateral move, ``adjust_speed`` the cap on
    the ego's speed relative to the fleet while repositioning, and
    ``settle_time`` how long a failure trial keeps running after the ego
    has finished or abandoned its merge, to catch late collisions.
    """

    params: KinematicParams = field(default_factory=KinematicParams)
    v_ego: float = 20.0
    t_lc: float = 3.0
    dt: float = DT
    adjust_speed: float = 10.0
    reject_pulse: float = 1.0
    settle_time: float = 5.0
    align_margin: float | None = 1.0


@dataclass(frozen=True)
class FailureInjection:
    """A target-lane follower that acquiesces and then accelerates anyway.

    ``t_accel_start`` counts from the moment the lane change begins, or from
    the start of the trial when ``from_trial_start`` is set; a follower
    that accelerates before the lateral move has begun stops the merge.
    """

    enabled: bool = False
    from_trial_start: bool = False
    t_accel_start: float = 0.0
    accel: float = 0.0
    v_f2_initial: float = 20.0
    v_cap: float = 30.0


@dataclass(frozen=True)
class Event:
    time: float
    type: str
    vehicles: tuple = ()
    payload: dict = field(default_factory=dict)

    def to_line(self) -> str:
        data = {
            "t": round(self.time, 6),
            "type": self.type,
            "ids": list(self.vehicles),
            "data": {k: round(v, 6) if isinstance(v, float) else v for k, v in self.payload.items()},
        }
        return json.dumps(data, sort_keys=True)


def dump_events(events, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(ev.to_line() + "\n")


def load_event_lines(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class TrialRecord:
    success: bool
    time_cost: float | None
    outcome: Outcome
    n_gaps_inspected: int
    n_negotiations: int
    collision_detail: str | None
    seed: int
    trial: int = 0
    strategy: Strategy = Strategy.NEW
    events: list = field(default_factory=list)


# -- world -----------------------------------------------------------------------


class WorldState:
    """All vehicles of one trial, grouped by lane and ordered front to back.

    The ego lives outside the lane lists; ``ego_lanes`` says which lanes it
    currently occupies (both, for the whole lateral move).
    """

    def __init__(
        self,
        params: KinematicParams,
        ego: SimVehicle | None = None,
        fleet: list[SimVehicle] | None = None,
        l1: SimVehicle | None = None,
        f1: SimVehicle | None = None,
        frame_speed: float = 0.0,
        dt: float = DT,
    ) -> None:
        self.params = params
        self.time = 0.0
        self.steps = 0
        self.dt = dt
        self.frame_speed = frame_speed
        self.ego = ego
        self.fleet = fleet or []
        self.l1 = l1
        self.f1 = f1
        self.ego_lanes = {ORIGINAL}
        self.ego_lateral_rate = 0.0
        self.ego_done = False
        self.watch: set[int] = set()
        self.active: set[int] = set()
        self.f2_blind = False
        self.event_log: list[Event] = []
        # frame positions of fleet vehicles not built yet; they all cruise at
        # frame speed, so their frame position stays put until they are needed
        self._pending: list[float] = []
        self._pending_at = 0
        self._chunk = 32
        for i, veh in enumerate(self.fleet):
            if not self._cruising(veh):
                self.active.add(i)

    def defer_fleet(self, xs: list[float], chunk: int = 32) -> None:
        """Append cruising vehicles at frame positions ``xs`` lazily, ``chunk`` at a time."""
        self._pending = list(xs)
        self._pending_at = 0
        self._chunk = chunk

    def ensure(self, i: int) -> bool:
        """Build fleet vehicles up to index ``i``; False if the fleet is shorter."""
        fleet = self.fleet
        while len(fleet) <= i and self._pending_at < len(self._pending):
            stop = min(self._pending_at + self._chunk, len(self._pending))
            v = self.frame_speed
            for j in range(self._pending_at, stop):
                idx = len(fleet)
                fleet.append(SimVehicle(id=idx + 1, lane=TARGET, x=self._pending[j], v=v, v_des=v))
            self._pending_at = stop
        return i < len(fleet)

    @property
    def fleet_size(self) -> int:
        return len(self.fleet) + len(self._pending) - self._pending_at

    @property
    def vehicles(self) -> list[SimVehicle]:
        out = [v for v in (self.ego, self.l1, self.f1) if v is not None]
        return out + self.fleet

    def absolute_x(self, veh: VehicleState) -> float:
        return veh.x + self.frame_speed * self.time

    def _cruising(self, veh: SimVehicle) -> bool:
        return (
            veh.a == 0.0
            and veh.v == self.frame_speed
            and veh.v_des == veh.v
            and veh.mode is Mode.CRUISE
        )

    def fleet_neighbours(self, x: float) -> tuple[int, int]:
        """Indices of the fleet vehicles just ahead of and behind front position ``x``."""
        fleet = self.fleet
        lo, hi = 0, len(fleet)
        while lo < hi:
            mid = (lo + hi) // 2
            if fleet[mid].x > x:
                lo = mid + 1
            else:
                hi = mid
        while lo == len(fleet) and self.ensure(lo):
            # x lies behind every built vehicle
            while lo < len(fleet) and fleet[lo].x > x:
                lo += 1
        return lo - 1, lo


def _advance(veh: SimVehicle, dt: float, v_max: float, frame: float) -> None:
    v = veh.v
    a = veh.a
    v_new = v + a * dt
    if v_new < 0.0:
        dx = v * v / (-2.0 * a)
        v_new = 0.0
    elif v_new > v_max:
        t_c = (v_max - v) / a
        dx = v * t_c + 0.5 * a * t_c * t_c + v_max * (dt - t_c)
        v_new = v_max
    else:
        dx = v * dt + 0.5 * a * dt * dt
    veh.x += dx - frame * dt
    veh.v = v_new


def _track(v: float, v_des: float, accel: float, dt: float) -> float:
    a = (v_des - v) / dt
    if a > accel:
        return accel
    if a < -accel:
        return -accel
    return a


def _capacity(v: float, params: KinematicParams) -> float:
    # braking_capacity without argument checks; engine speeds are clamped already
    return params.a_min_brake + v / params.v_max * (params.a_max_brake - params.a_min_brake)


def _forbidden(v_f: float, v_l: float, lag: float, params: KinematicParams) -> float:
    if v_f <= 0.0:
        return 0.0
    raw = v_f * lag + v_f * v_f / (2.0 * _capacity(v_f, params)) - v_l * v_l / (2.0 * params.a_max_brake)
    return raw if raw > 0.0 else 0.0


def _follow(veh: SimVehicle, leader: VehicleState | None, gap: float, params, dt: float) -> float:
    """Acceleration of a non-ego driver that keeps out of its leader's forbidden area."""
    lag = params.rho_human if veh.is_human else params.rho
    if leader is not None:
        if gap < _forbidden(veh.v, leader.v, lag, params):
            if veh.v > leader.v or leader.a < 0.0:
                return -_capacity(veh.v, params)
            # inside the area but not closing: never accelerate deeper into it
            return min(0.0, _track(veh.v, veh.v_des, params.a_max_accel, dt))
    if veh.mode is Mode.PULSE:
        return params.a_max_accel
    if veh.mode is Mode.FAILING:
        if veh.v >= veh.v_des:
            return 0.0
        return min(veh.mode_accel, (veh.v_des - veh.v) / dt)
    return _track(veh.v, veh.v_des, params.a_max_accel, dt)


def step_world(w: WorldState, params: KinematicParams | None = None, dt: float | None = None) -> WorldState:
    """Advance every vehicle by one step; the ego's ``a`` and lateral rate are set by the caller.

    Returns the same (mutated) world for chaining.
    """
    params = params or w.params
    dt = w.dt if dt is None else dt
    frame = w.frame_speed
    l_v = params.l_v
    ego = w.ego
    now = w.time

    # original lane: l1 has no leader, f1 follows the ego until it has left
    stepped: list[SimVehicle] = []
    if w.l1 is not None:
        w.l1.a = _follow(w.l1, None, math.inf, params, dt)
        stepped.append(w.l1)
    if w.f1 is not None:
        if ego is not None and ORIGINAL in w.ego_lanes:
            leader = ego
        else:
            leader = w.l1
        gap = math.inf if leader is None else leader.x - l_v - w.f1.x
        w.f1.a = _follow(w.f1, leader, gap, params, dt)
        stepped.append(w.f1)

    # target lane: only vehicles that move relative to the frame or sit near the ego
    fleet = w.fleet
    if fleet:
        for i in list(w.active):
            veh = fleet[i]
            if veh.mode is Mode.PULSE and now >= veh.mode_until:
                veh.mode = Mode.CRUISE
        ego_in_target = ego is not None and TARGET in w.ego_lanes
        # the watch window only matters while the ego shares the target lane
        indices = w.active | w.watch if ego_in_target else w.active
        if indices:
            lo = max(min(indices) - 1, 0)
            hi = max(indices) + 1
            ego_ahead = None
            if ego_in_target:
                ego_ahead, _ = w.fleet_neighbours(ego.x)
            i = lo
            while i <= hi or i - 1 in w.active:
                if i >= len(fleet) and not w.ensure(i):
                    break
                veh = fleet[i]
                leader = fleet[i - 1] if i > 0 else None
                if ego_in_target and i == ego_ahead + 1 and not (w.f2_blind and veh.mode is Mode.FAILING):
                    leader = ego
                gap = math.inf if leader is None else leader.x - l_v - veh.x
                if leader is not None and leader is not ego and leader.a == 0.0 and veh.a == 0.0 \
                        and veh.mode is Mode.CRUISE and veh.v == leader.v == veh.v_des:
                    veh.a = 0.0
                else:
                    veh.a = _follow(veh, leader, gap, params, dt)
                if veh.a != 0.0 or veh.v != frame or veh.mode is not Mode.CRUISE or veh.v_des != frame:
                    w.active.add(i)
                i += 1

    v_max = params.v_max
    if ego is not None:
        _advance(ego, dt, v_max, frame)
        if w.ego_lateral_rate:
            ego.y_frac = min(max(ego.y_frac + w.ego_lateral_rate * dt, 0.0), 1.0)
    for veh in stepped:
        _advance(veh, dt, v_max, frame)
    for i in sorted(w.active):
        veh = fleet[i]
        _advance(veh, dt, v_max, frame)
        if abs(veh.v - veh.v_des) < 1e-9 and veh.mode is Mode.CRUISE:
            veh.v = veh.v_des
        if veh.v == frame and veh.v_des == frame and veh.mode is Mode.CRUISE and veh.a == 0.0:
            w.active.discard(i)
    w.steps += 1
    w.time = w.steps * dt
    return w


def detect_collision(w: WorldState) -> Event | None:
    """First bumper overlap in any lane the ego occupies (the ego counts in both while moving across)."""
    l_v = w.params.l_v
    ego = w.ego
    if ego is None:
        return None
    if ORIGINAL in w.ego_lanes:
        for lead, follow in ((w.l1, ego), (ego, w.f1)):
            if lead is not None and follow is not None and lead.x - l_v - follow.x < 0:
                return _collision_event(w, lead, follow, ORIGINAL)
    elif w.l1 is not None and w.f1 is not None and w.l1.x - l_v - w.f1.x < 0:
        return _collision_event(w, w.l1, w.f1, ORIGINAL)
    if w.fleet:
        if TARGET in w.ego_lanes:
            ahead, behind = w.fleet_neighbours(ego.x)
            if ahead >= 0 and w.fleet[ahead].x - l_v - ego.x < 0:
                return _collision_event(w, w.fleet[ahead], ego, TARGET)
            if behind < len(w.fleet) and ego.x - l_v - w.fleet[behind].x < 0:
                return _collision_event(w, ego, w.fleet[behind], TARGET)
        for i in sorted(w.active | w.watch if TARGET in w.ego_lanes else w.active):
            if 0 < i < len(w.fleet) and w.fleet[i - 1].x - l_v - w.fleet[i].x < 0:
                return _collision_event(w, w.fleet[i - 1], w.fleet[i], TARGET)
    return None


def _collision_event(w: WorldState, lead, follow, lane: int) -> Event:
    return Event(
        w.time,
        "collision",
        (lead.id, follow.id),
        {"lane": lane, "overlap": -(lead.x - w.params.l_v - follow.x)},
    )


# -- ego behaviour -----------------------------------------------------------------


def plan_relative_move(distance: float, accel: float, speed_cap: float, dt: float) -> list[tuple[float, int]]:
    """Bang-bang profile (accelerate, cruise, brake) covering ``distance`` from relative rest.

    Returns ``(acceleration, steps)`` segments; the sign of ``distance`` gives
    the direction. The profile ends at relative rest, at most half a cruise
    step short of or past the requested distance.
    """
    d = abs(distance)
    unit = accel * dt * dt
    n_cap = max(int(speed_cap / (accel * dt) + 1e-9), 1)
    n1 = min(n_cap, int(math.sqrt(d / unit)))
    if n1 == 0:
        return []
    n2 = int(round((d - unit * n1 * n1) / (unit * n1)))
    sign = 1.0 if distance > 0 else -1.0
    plan = [(sign * accel, n1)]
    if n2 > 0:
        plan.append((0.0, n2))
    plan.append((-sign * accel, n1))
    return plan


def merge_space_sufficient(
    ctx: GapContext,
    remaining_time: float,
    accel: float,
    f2_accel: float,
    f2_cap: float,
    strategy: Strategy,
    params: KinematicParams,
) -> bool:
    """Whether the ego can finish merging by matching the follower's acceleration.

    Everyone is extrapolated at constant acceleration for the rest of the
    lateral move. Ahead, each leader's forbidden area at matched speed
    must still fit (the ego straddles both lanes, so both leaders count).
    Behind, the follower's forbidden area (new strategy) or its whole safe
    distance (RSS) must be clear.
    """
    t = remaining_time
    v_e, s_e = _extrapolate(ctx.ego.v, accel, params.v_max, t)
    for lead, gap in ((ctx.l1, ctx.d_ego_l1), (ctx.l2, ctx.d_ego_l2)):
        if lead is None:
            continue
        v_l, s_l = _extrapolate(lead.v, lead.a, params.v_max, t)
        if gap + s_l - s_e < forbidden_distance(v_l, v_l, params.rho, params):
            return False
    if ctx.f2 is None:
        return True
    v_f, s_f = _extrapolate(ctx.f2.v, f2_accel, f2_cap, t)
    rear = ctx.d_ego_f2 + s_e - s_f
    if strategy is Strategy.RSS:
        need = negotiable_boundary(v_f, v_e, params)
    else:
        need = forbidden_distance(v_f, v_e, params.rho_human, params)
    return rear >= need


def _extrapolate(v: float, a: float, cap: float, t: float) -> tuple[float, float]:
    """Speed and distance after ``t`` seconds at acceleration ``a``, clamped to [0, cap]."""
    if a > 0 and v + a * t > cap:
        t_c = max((cap - v) / a, 0.0)
        return cap, v * t_c + 0.5 * a * t_c * t_c + cap * (t - t_c)
    if a < 0 and v + a * t < 0:
        return 0.0, v * v / (-2.0 * a)
    return v + a * t, v * t + 0.5 * a * t * t


class _Phase(enum.Enum):
    SEARCH = "search"
    NEGOTIATE = "negotiate"
    ACT = "act"
    RETURN = "return"
    SETTLE = "settle"
    OVER = "over"


class Trial:
    """One lane-change attempt: fleet generation, ego strategy, outcome bookkeeping."""

    MAX_CORRECTIONS = 2
    ALIGN_TOL = 0.5

    def __init__(
        self,
        strategy: Strategy,
        traffic_cfg: TrafficConfig,
        failure: FailureInjection | None = None,
        p_consent: float = 1.0,
        budget: float = 180.0,
        sim_cfg: SimConfig | None = None,
        trial_index: int = 0,
        record_events: bool = True,
    ) -> None:
        self.strategy = strategy
        self.cfg = sim_cfg or SimConfig()
        self.params = self.cfg.params
        self.traffic = traffic_cfg
        self.failure = failure or FailureInjection()
        self.p_consent = p_consent
        self.budget = budget
        self.trial_index = trial_index
        self.record_events = record_events
        self.seed = traffic_cfg.seed
        self.consent_rng = make_rng(self.seed, trial_index, NEGOTIATION)

        self.proc = DlcProcess()
        self.phase = _Phase.SEARCH
        self.plan: list[tuple[float, int]] = []
        self.corrections = 0
        self.candidate = 0
        self.n_gaps = 0
        self.n_negotiations = 0
        self.pending_response: tuple[float, NegotiationResponse] | None = None
        self.lateral_steps = 0
        self.n_lc = max(int(round(self.cfg.t_lc / self.cfg.dt)), 1)
        self.completed_at: float | None = None
        self.collision: Event | None = None
        self.returned = False
        self.reaction: FailureReaction | None = None
        self.ego_accel_target = 0.0
        self.failure_fired = False
        self.phase_end = math.inf
        self.acting_start = 0.0
        self.world = self._build_world()

    # -- setup --------------------------------------------------------------------

    def _build_world(self) -> WorldState:
        p = self.params
        tc = self.traffic
        # a failure trial runs the whole scene at the follower's sampled speed
        v_fleet = self.failure.v_f2_initial if self.failure.enabled else tc.v_l2_mean
        tc = replace(tc, v_l2_mean=v_fleet)
        spacing = 3600.0 / tc.lambda_flow * v_fleet
        # roadway for the whole budget at the speed limit, with a factor 2 margin
        n_needed = int(math.ceil(2.0 * self.budget * p.v_max / spacing)) + 12
        rng = make_rng(self.seed, self.trial_index, FLEET)
        phase = rng.random()
        # fixed-size blocks keep the fleet a prefix-stable function of the seed,
        # so a longer budget only appends vehicles behind the same ones
        blocks = []
        for _ in range(-(-n_needed // FLEET_BLOCK)):
            blocks.append(physical_headways(tc, FLEET_BLOCK, p, rng))
        gaps = np.concatenate(blocks) * v_fleet
        n = gaps.size
        # the ego starts beside the gap between fleet vehicles 2 and 3
        lead = 2
        xs = np.empty(n)
        xs[lead:] = phase * gaps[lead] - np.concatenate(([0.0], np.cumsum(gaps[lead:n - 1])))
        xs[:lead] = xs[lead] + np.cumsum(gaps[:lead][::-1])[::-1]
        self.candidate = lead

        v_ego = v_fleet if self.failure.enabled else self.cfg.v_ego
        ego = SimVehicle(id=EGO_ID, lane=ORIGINAL, x=0.0, v=v_ego, v_des=v_fleet, is_human=False)
        orng = make_rng(self.seed, self.trial_index, ORIGINAL_LANE)
        h1 = physical_headways(tc, 2, p, orng) * v_ego
        l1 = SimVehicle(id=L1_ID, lane=ORIGINAL, x=float(h1[0]), v=v_ego, v_des=v_ego)
        f1 = SimVehicle(id=F1_ID, lane=ORIGINAL, x=-float(h1[1]), v=v_ego, v_des=v_ego)
        world = WorldState(p, ego, [], l1, f1, frame_speed=v_fleet, dt=self.cfg.dt)
        world.defer_fleet(xs.tolist())
        self._log(world, "trial_start", (EGO_ID,), {"phase": phase, "lambda": float(tc.lambda_flow)})
        return world

    def _log(self, w: WorldState, kind: str, ids=(), payload=None) -> None:
        if self.record_events:
            w.event_log.append(Event(w.time, kind, tuple(ids), payload or {}))

    # -- helpers ------------------------------------------------------------------

    def _gap_vehicles(self, k: int):
        fleet = self.world.fleet
        self.world.ensure(k + 1)
        l2 = fleet[k] if 0 <= k < len(fleet) else None
        f2 = fleet[k + 1] if 0 <= k + 1 < len(fleet) else None
        return l2, f2

    def _context(self, k: int | None = None) -> GapContext:
        w = self.world
        if k is None:
            k = self.candidate
        l2, f2 = self._gap_vehicles(k)
        return GapContext.from_vehicles(w.ego, w.l1, l2, f2, self.params.l_v)

    def _plain_context(self, ctx: GapContext) -> GapContext:
        """The same context viewed from the original lane (for re-checks mid-manoeuvre)."""
        ego = ctx.ego
        if ego.y_frac == 0.0:
            return ctx
        ego0 = VehicleState(ego.id, ego.lane, ego.x, ego.v, ego.a, 0.0, ego.is_human)
        return GapContext(ego0, ctx.l1, ctx.l2, ctx.f2, ctx.d_ego_l1, ctx.d_ego_l2, ctx.d_ego_f2)

    def _alignment_shift(self, k: int) -> float:
        """Signed move (frame metres) that centres the ego in the best band of gap ``k``."""
        w = self.world
        ego = w.ego
        l2, f2 = self._gap_vehicles(k)
        if l2 is None:
            return 0.0
        p = self.params
        probe = VehicleState(ego.id, ego.lane, ego.x, w.frame_speed, 0.0)
        ctx = GapContext.from_vehicles(probe, None, l2, f2, p.l_v)
        th = gap_thresholds(ctx, p)
        free = ctx.d_ego_l2 + ctx.d_ego_f2
        rear = th.f2_boundary
        if free < th.l2 + rear and self.strategy is Strategy.NEW and (
            ctx.gap_id not in self.proc.forbidden_gaps
        ):
            rear = th.f2_forbidden
        # nearest point of the admissible band, kept a margin inside its edges
        if f2 is None:
            lo, hi = th.l2 + 1.0, math.inf
        elif free >= th.l2 + rear:
            slack = (free - th.l2 - rear) / 2.0
            if self.cfg.align_margin is not None:
                slack = min(slack, self.cfg.align_margin)
            lo, hi = th.l2 + slack, free - rear - slack
        else:
            lo = hi = free / 2.0
        return ctx.d_ego_l2 - min(max(ctx.d_ego_l2, lo), hi)

    def _start_search_leg(self) -> None:
        self.corrections = 0
        self._plan_to_candidate()

    def _plan_to_candidate(self) -> None:
        """Plan the bang-bang move that aligns the ego with the current candidate gap."""
        w = self.world
        p = self.params
        shift = self._alignment_shift(self.candidate)
        if shift > 0.0:
            cap = min(self.cfg.adjust_speed, p.v_max - w.frame_speed)
            shift = self._forward_room(shift, cap)
        else:
            cap = min(self.cfg.adjust_speed, w.frame_speed)
        self.plan = plan_relative_move(shift, p.a_max_accel, cap, w.dt) if cap > 0.0 else []

    def _worth_correcting(self) -> bool:
        """True when the gap is long enough for this strategy but the ego sits outside its band."""
        k = self.candidate
        l2, f2 = self._gap_vehicles(k)
        if l2 is None or f2 is None or abs(self._alignment_shift(k)) <= self.ALIGN_TOL:
            return False
        p = self.params
        ego = self.world.ego
        ctx = GapContext.from_vehicles(ego, None, l2, f2, p.l_v)
        th = gap_thresholds(ctx, p)
        rear = th.f2_boundary
        if self.strategy is Strategy.NEW and ctx.gap_id not in self.proc.forbidden_gaps:
            rear = th.f2_forbidden
        fits = ctx.d_ego_l2 + ctx.d_ego_f2 >= th.l2 + rear
        in_band = ctx.d_ego_l2 >= th.l2 and ctx.d_ego_f2 >= rear
        return fits and not in_band

    def _plan_clears_l1(self, plan) -> bool:
        w = self.world
        p = self.params
        l1 = w.l1
        gap = l1.x - p.l_v - w.ego.x
        u = 0.0
        dt = w.dt
        for a, n in plan:
            for _ in range(n):
                gap -= u * dt + 0.5 * a * dt * dt
                u += a * dt
                v = min(max(w.frame_speed + u, 0.0), p.v_max)
                if gap < forbidden_distance(v, l1.v, p.rho, p):
                    return False
        return True

    def _forward_room(self, shift: float, cap: float) -> float:
        """Largest forward move up to ``shift`` that stays out of the original-lane leader's forbidden area."""
        w = self.world
        if w.l1 is None or cap <= 0.0:
            return shift if cap > 0.0 else 0.0
        a = self.params.a_max_accel
        if self._plan_clears_l1(plan_relative_move(shift, a, cap, w.dt)):
            return shift
        lo, hi = 0.0, shift
        while hi - lo > 0.25:
            mid = (lo + hi) / 2.0
            if self._plan_clears_l1(plan_relative_move(mid, a, cap, w.dt)):
                lo = mid
            else:
                hi = mid
        return lo

    # -- main loop ------------------------------------------------------------------

    def run(self) -> TrialRecord:
        w = self.world
        dt = w.dt
        max_steps = int(math.ceil(self.budget / dt))
        self._start_search_leg()
        self._set_watch()
        while self.phase is not _Phase.OVER:
            self._decide()
            if self.phase is _Phase.OVER:
                break
            step_world(w, self.params, dt)
            hit = detect_collision(w)
            if hit is not None:
                self.collision = hit
                if self.record_events:
                    w.event_log.append(hit)
                self.phase = _Phase.OVER
                break
            if w.steps >= max_steps and self.phase in (_Phase.SEARCH, _Phase.NEGOTIATE):
                self._log(w, "budget_exhausted", (EGO_ID,))
                self.phase = _Phase.OVER
        return self._record()

    def _set_watch(self) -> None:
        k = self.candidate
        self.world.ensure(k + 2)
        self.world.watch = {i for i in (k - 1, k, k + 1, k + 2) if 0 <= i < len(self.world.fleet)}

    def _failure_due(self) -> bool:
        f = self.failure
        if not f.enabled or self.failure_fired:
            return False
        if f.from_trial_start:
            start = f.t_accel_start
        elif self.phase is _Phase.ACT:
            start = self.acting_start + f.t_accel_start
        else:
            return False
        return self.world.time >= start - 1e-9

    def _decide(self) -> None:
        phase = self.phase
        if phase in (_Phase.SEARCH, _Phase.NEGOTIATE) and self._failure_due():
            self._abort_before_entry()
            return
        if phase is _Phase.SEARCH:
            self._search()
        elif phase is _Phase.NEGOTIATE:
            self._negotiate()
        elif phase is _Phase.ACT:
            self._act()
        elif phase is _Phase.RETURN:
            self._return()
        elif phase is _Phase.SETTLE:
            self._settle()

    def _search(self) -> None:
        w = self.world
        ego = w.ego
        if self.plan:
            a, n = self.plan[0]
            ego.a = a
            if n <= 1:
                self.plan.pop(0)
            else:
                self.plan[0] = (a, n - 1)
            return
        if ego.v != w.frame_speed:
            ego.a = _track(ego.v, w.frame_speed, self.params.a_max_accel, w.dt)
            if abs(ego.v - w.frame_speed) < 1e-9:
                ego.v = w.frame_speed
                ego.a = 0.0
            else:
                return
        ego.a = 0.0
        if self.corrections < self.MAX_CORRECTIONS and self._worth_correcting():
            # traffic moved during the leg: re-aim before judging a gap that fits
            self.corrections += 1
            self._plan_to_candidate()
            if self.plan:
                self._search()
                return
        ctx = self._context()
        self.n_gaps += 1
        if min(ctx.d_ego_l1, ctx.d_ego_l2, ctx.d_ego_f2) < 0.0:
            # the ego is alongside a vehicle: no gap to judge here
            directive = Directive.ADJUST
        elif self.strategy is Strategy.NEW:
            self.proc, directive = dlc_step(self.proc, ctx, None, w.time, self.params)
        else:
            self.proc, directive = rss_step(self.proc, ctx, w.time, self.params)
        if self.record_events:
            self._log(w, "gap_inspected", ctx.gap_id, {
                "d_l2": ctx.d_ego_l2, "d_f2": ctx.d_ego_f2, "directive": directive.value,
            })
        if directive is Directive.CHANGE_LANE:
            self._begin_lane_change()
        elif directive is Directive.REQUEST_MERGE:
            self._issue_request(ctx)
        else:
            self._next_gap()

    def _next_gap(self) -> None:
        self.candidate += 1
        if not self.world.ensure(self.candidate + 1):
            self._log(self.world, "fleet_exhausted", (EGO_ID,))
            self.phase = _Phase.OVER
            return
        self._set_watch()
        self._start_search_leg()

    def _issue_request(self, ctx: GapContext) -> None:
        w = self.world
        self.n_negotiations += 1
        self.phase = _Phase.NEGOTIATE
        f2_id = ctx.f2.id
        self._log(w, "request_issued", (EGO_ID, f2_id), {"deadline": self.proc.negotiation_deadline})
        if self.failure.enabled:
            # failure trials: the follower always stays silent (acquiescence)
            self.pending_response = (self.proc.negotiation_deadline, NegotiationResponse.NO_RESPONSE)
            return
        consent = self.consent_rng.random() < self.p_consent
        if consent:
            self.pending_response = (self.proc.negotiation_deadline, NegotiationResponse.CONSENT)
        else:
            self.pending_response = (w.time + w.dt, NegotiationResponse.REJECT)

    def _negotiate(self) -> None:
        w = self.world
        w.ego.a = 0.0
        due, response = self.pending_response
        if w.time < due - 1e-9:
            return
        ctx = self._context()
        self.pending_response = None
        gap_id = self.proc.gap_id
        self.proc, directive = dlc_step(self.proc, ctx, response, w.time, self.params)
        self._log(w, "response_received", (ctx.f2.id, EGO_ID), {"response": response.value})
        if response is NegotiationResponse.REJECT:
            veh = ctx.f2
            veh.mode = Mode.PULSE
            veh.mode_until = w.time + self.cfg.reject_pulse
            w.active.add(self.candidate + 1)
        if directive is Directive.CHANGE_LANE:
            self._log(w, "owner_transferred", (EGO_ID,) + tuple(i for i in gap_id if i is not None))
            self._begin_lane_change()
        else:
            self.phase = _Phase.SEARCH
            self._next_gap()

    def _begin_lane_change(self) -> None:
        w = self.world
        self.phase = _Phase.ACT
        w.ego_lanes = {ORIGINAL, TARGET}
        w.ego_lateral_rate = 1.0 / self.cfg.t_lc
        w.ego.a = 0.0
        self.acting_start = w.time
        self._log(w, "lane_change_started", (EGO_ID,), {"owner": self.proc.owner_of_negotiable.value})
        self._act()

    def _f2(self) -> SimVehicle | None:
        _, f2 = self._gap_vehicles(self.candidate)
        return f2

    def _fire_failure(self) -> None:
        w = self.world
        f2 = self._f2()
        self.failure_fired = True
        if f2 is None:
            return
        f2.mode = Mode.FAILING
        f2.mode_accel = self.failure.accel
        f2.v_des = max(self.failure.v_cap, f2.v) if self.failure.accel > 0 else f2.v
        w.f2_blind = True
        w.active.add(self.candidate + 1)
        self._log(w, "failure_injected", (f2.id,), {"accel": self.failure.accel})

    def _abort_before_entry(self) -> None:
        w = self.world
        self._fire_failure()
        if self.proc.stage in (Stage.NEGOTIATING, Stage.ACTING):
            self.reaction = failure_reaction(self.proc, False, False)
        else:
            self.reaction = FailureReaction.ABORT_BEFORE_ENTRY
        self.proc = abort(self.proc, w.time)
        self._log(w, "failure_detected", (EGO_ID,), {"reaction": self.reaction.value})
        self.plan = []
        self.phase = _Phase.SETTLE
        self.phase_end = w.time + self.cfg.settle_time
        self._settle()

    def _act(self) -> None:
        w = self.world
        ego = w.ego
        if self._failure_due():
            self._fire_failure()
        f2 = self._f2()
        if (
            self.reaction is None
            and self.failure_fired
            and f2 is not None
            and f2.a > 0.0
        ):
            self._react(f2)
            if self.phase is not _Phase.ACT:
                return
        if self.lateral_steps >= self.n_lc:
            self.proc, _ = (
                dlc_step(self.proc, self._context(), None, w.time, self.params, lateral_done=True)
                if self.strategy is Strategy.NEW
                else rss_step(self.proc, self._context(), w.time, self.params, lateral_done=True)
            )
            ego.y_frac = 1.0
            ego.lane = TARGET
            w.ego_lanes = {TARGET}
            w.ego_lateral_rate = 0.0
            w.ego_done = True
            self.completed_at = w.time
            self._log(w, "lane_change_completed", (EGO_ID,), {"time_cost": w.time})
            if self.failure.enabled:
                self.phase = _Phase.SETTLE
                self.phase_end = w.time + self.cfg.settle_time
                w.f2_blind = False
                self._settle()
            else:
                self.phase = _Phase.OVER
            return
        self.lateral_steps += 1
        if self.reaction is FailureReaction.ACCELERATE_AND_COMPLETE:
            ego.a = self.ego_accel_target if ego.v < self.params.v_max else 0.0
            self._guard_ego(ego.a)
        else:
            ego.a = 0.0
            self._guard_ego(0.0)

    def _react(self, f2: SimVehicle) -> None:
        w = self.world
        ego = w.ego
        remaining = (self.n_lc - self.lateral_steps) * w.dt
        accel = min(f2.a, self.params.a_max_accel)
        ctx = self._context()
        sufficient = merge_space_sufficient(
            ctx, remaining, accel, f2.a, self.failure.v_cap, self.strategy, self.params
        )
        entered = self.lateral_steps > 0
        self.reaction = failure_reaction(self.proc, entered, sufficient)
        t_merging = w.time - self.acting_start
        payload = {"reaction": self.reaction.value, "t_merging": t_merging}
        if self.reaction is FailureReaction.RETURN_TO_ORIGINAL:
            forbidden = forbidden_distance(min(f2.v, self.params.v_max), ego.v, self.params.rho_human, self.params)
            payload["t_elude"] = elude_time(
                ego.v, min(f2.v, self.params.v_max), t_merging, forbidden, max(f2.a, 1e-9), self.params
            )
        self._log(w, "failure_detected", (f2.id, EGO_ID), payload)
        if self.reaction is FailureReaction.ACCELERATE_AND_COMPLETE:
            self.ego_accel_target = accel
        else:
            self.proc = abort(self.proc, w.time)
            self.phase = _Phase.RETURN
            w.ego_lateral_rate = -1.0 / self.cfg.t_lc
            self._return()

    def _return(self) -> None:
        w = self.world
        ego = w.ego
        if self.lateral_steps <= 0:
            ego.y_frac = 0.0
            w.ego_lanes = {ORIGINAL}
            w.ego_lateral_rate = 0.0
            self.returned = True
            self._log(w, "returned", (EGO_ID,))
            self.phase = _Phase.SETTLE
            self.phase_end = w.time + self.cfg.settle_time
            self._settle()
            return
        self.lateral_steps -= 1
        ego.a = 0.0
        self._guard_ego(0.0)

    def _settle(self) -> None:
        w = self.world
        if w.time >= self.phase_end - 1e-9:
            self.phase = _Phase.OVER
            return
        ego = w.ego
        ego.a = _track(ego.v, w.frame_speed, self.params.a_max_accel, w.dt)
        self._guard_ego(ego.a)

    def _guard_ego(self, wanted: float) -> None:
        """Keep the ego out of the forbidden area of whichever leaders share its lanes."""
        w = self.world
        ego = w.ego
        p = self.params
        leaders = []
        if ORIGINAL in w.ego_lanes and w.l1 is not None:
            leaders.append(w.l1)
        if TARGET in w.ego_lanes and w.fleet:
            ahead, _ = w.fleet_neighbours(ego.x)
            if ahead >= 0:
                leaders.append(w.fleet[ahead])
        for lead in leaders:
            gap = lead.x - p.l_v - ego.x
            if gap < _forbidden(ego.v, lead.v, p.rho, p) and (ego.v > lead.v or lead.a < 0):
                ego.a = -_capacity(ego.v, p)
                return
        ego.a = wanted

    # -- result ---------------------------------------------------------------------

    def _record(self) -> TrialRecord:
        if self.collision is not None:
            outcome = Outcome.STATE3
            detail = f"{self.collision.vehicles} lane={self.collision.payload['lane']} t={self.collision.time:.1f}"
        elif self.completed_at is not None:
            outcome = Outcome.STATE1
            detail = None
        else:
            outcome = Outcome.STATE2
            detail = None
        success = outcome is Outcome.STATE1
        if not self.failure.enabled:
            success = self.completed_at is not None and self.completed_at <= self.budget + 1e-9 and (
                self.collision is None
            )
        return TrialRecord(
            success=success,
            time_cost=self.completed_at,
            outcome=outcome,
            n_gaps_inspected=self.n_gaps,
            n_negotiations=self.n_negotiations,
            collision_detail=detail,
            seed=self.seed,
            trial=self.trial_index,
            strategy=self.strategy,
            events=self.world.event_log,
        )


def run_trial(
    strategy: Strategy,
    traffic_cfg: TrafficConfig,
    failure: FailureInjection | None = None,
    p_consent: float = 1.0,
    budget: float = 180.0,
    params: KinematicParams | None = None,
    trial_index: int = 0,
    sim_cfg: SimConfig | None = None,
    record_events: bool = True,
) -> TrialRecord:
    """Simulate one lane-change attempt until it completes, aborts, collides or runs out of time."""
    if budget <= 0:
        raise ValueError("budget must be positive")
    if sim_cfg is None:
        sim_cfg = SimConfig(params=params or KinematicParams())
    elif params is not None and params != sim_cfg.params:
        raise ValueError("params disagree with sim_cfg.params")
    trial = Trial(strategy, traffic_cfg, failure, p_consent, budget, sim_cfg, trial_index, record_events)
    return trial.run()


def sample_failure(seed: int, trial_index: int) -> FailureInjection:
    """Failure parameters drawn uniformly over the experiment's ranges."""
    rng = make_rng(seed, trial_index, FAILURE)
    v0, t0, acc = rng.random(3)
    return FailureInjection(
        enabled=True,
        v_f2_initial=10.0 + 15.0 * v0,
        t_accel_start=4.0 * t0,
        accel=2.0 * acc,
    )


__all__ = [
    "DT",
    "Event",
    "FailureInjection",
    "Outcome",
    "RNG_ID",
    "SimConfig",
    "Strategy",
    "Trial",
    "TrialRecord",
    "WorldState",
    "detect_collision",
    "dump_events",
    "load_event_lines",
    "merge_space_sufficient",
    "plan_relative_move",
    "run_trial",
    "sample_failure",
    "step_world",
]
