"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Per-trial results are cached for the session, so cells shared between
criteria (the time-cost cells at 600 and 1200 veh/h) are simulated once.
Trial streams are prefix-stable, so a 3000-trial cell is exactly the first
3000 trials of the 10,000-trial cell with the same settings.
"""

import math
import time

import numpy as np

from rowlane.envelope import (
    KinematicParams,
    boundary_oracle,
    braking_oracle,
    elude_time,
    forbidden_distance,
    negotiable_boundary,
)
from rowlane.experiments import (
    CONSENT_SWEEP,
    DEFAULT_FAILURE_BUDGET,
    DEFAULT_TIME_BUDGET,
    SUCCESS_BUDGETS,
    TIME_COST_LAMBDAS,
    ExperimentKind,
    ExperimentSpec,
    _CellJob,
    format_results,
    run_cell,
    run_failure_experiment,
)
from rowlane.sim import Outcome, SimConfig, Strategy
from rowlane.traffic import TrafficConfig, sample_headways

P = KinematicParams()
SEED = 0
FULL = 10_000
TREND = 3_000
SUCCESS_TRIALS = 2_000

_cache: dict = {}
_elapsed: dict = {}


def cell(strategy, lam, p, budget, trials, failure=False):
    """Per-trial (time_cost, outcome) for a cell, reusing any longer run already made."""
    key = (strategy, float(lam), float(p), float(budget), failure)
    have = _cache.get(key)
    if have is None or len(have) < trials:
        job = _CellJob(strategy, float(lam), float(p), float(budget), failure, SEED, SimConfig(), 0.8, 20.0)
        t0 = time.perf_counter()
        have = run_cell(job, trials)
        _elapsed[key] = time.perf_counter() - t0
        _cache[key] = have
    return have[:trials]


def mean_completed(results):
    times = [t for t, _ in results if t is not None]
    return math.fsum(times) / len(times)


def shares(results):
    n = len(results)
    return {o: sum(1 for _, x in results if x == o.value) / n for o in Outcome}


# -- criterion 1 -------------------------------------------------------------------


def test_c1_envelope_matches_braking_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    v_f = rng.uniform(0.0, P.v_max, 1000)
    v_l = rng.uniform(0.0, P.v_max, 1000)
    lag = rng.uniform(0.0, 2.0, 1000)
    f = np.array([forbidden_distance(a, b, c, P) for a, b, c in zip(v_f, v_l, lag)])
    at_envelope = braking_oracle(v_f, v_l, lag, f, P)
    tight = f > 0.1
    inside = braking_oracle(v_f[tight], v_l[tight], lag[tight], f[tight] - 0.1, P)
    elapsed = time.perf_counter() - t0
    ok = bool(at_envelope.min() >= -1e-6 and np.all(inside < 0) and elapsed < 10.0)
    verdict(
        "C1 envelope vs braking oracle",
        ok,
        f"min gap at envelope {at_envelope.min():.2e} m, contact in {int(np.sum(inside < 0))}/{int(tight.sum())} "
        f"shrunk cases, {elapsed:.2f} s",
    )
    assert ok


# -- criterion 2 -------------------------------------------------------------------


def test_c2_boundary_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 1)
    v_f2 = rng.uniform(0.0, P.v_max, 200)
    v_ego = rng.uniform(0.0, P.v_max, 200)
    b = np.array([negotiable_boundary(a, c, P) for a, c in zip(v_f2, v_ego)])
    lowest = boundary_oracle(v_f2, v_ego, b, P)
    elapsed = time.perf_counter() - t0
    ok = bool(lowest.min() >= -1e-6 and elapsed < 5.0)
    verdict("C2 negotiable boundary vs oracle", ok, f"min gap {lowest.min():.2e} m over 200 pairs, {elapsed:.2f} s")
    assert ok


# -- criterion 3 -------------------------------------------------------------------


def test_c3_hand_constants(verdict):
    got = {
        "F(20,20,0.1)": (forbidden_distance(20, 20, 0.1, P), 11.524),
        "F(20,20,1.0)": (forbidden_distance(20, 20, 1.0, P), 29.524),
        "boundary(20,20)": (negotiable_boundary(20, 20, P), 108.667),
        "t_elude(20,20,1,29.524,2)": (elude_time(20, 20, 1.0, 29.524, 2.0, P), 3.742),
    }
    ok = all(abs(v - want) <= 1e-3 for v, want in got.values())
    verdict("C3 hand constants", ok, ", ".join(f"{k}={v:.4f}" for k, (v, _) in got.items()))
    assert ok


# -- criterion 4 -------------------------------------------------------------------


def test_c4_headway_statistics(verdict):
    h = sample_headways(TrafficConfig(1200, sigma=0.8, seed=SEED), 1_000_000)
    mean = h.mean()
    sd_log = np.log(h).std()
    ok = abs(mean - 3.0) <= 0.02 * 3.0 and abs(sd_log - 0.8) <= 0.01 * 0.8
    verdict("C4 headway statistics", ok, f"mean h {mean:.4f} s, sd(ln h) {sd_log:.4f}")
    assert ok


# -- criterion 5 -------------------------------------------------------------------


def test_c5_zero_collisions(verdict):
    collisions = {}
    elapsed = 0.0
    for strategy in Strategy:
        for lam in (600, 1200):
            res = cell(strategy, lam, 0.25, DEFAULT_TIME_BUDGET, FULL)
            elapsed += _elapsed[(strategy, float(lam), 0.25, DEFAULT_TIME_BUDGET, False)]
            collisions[(strategy.value, lam)] = sum(1 for _, o in res if o == Outcome.STATE3.value)
    ok = all(n == 0 for n in collisions.values()) and elapsed < 300.0
    verdict(
        "C5 zero collisions without failures",
        ok,
        ", ".join(f"{s}@{lam}: {n} State3" for (s, lam), n in collisions.items())
        + f" ({FULL} trials each, {elapsed:.0f} s)",
    )
    assert ok


# -- criterion 6 -------------------------------------------------------------------


def test_c6a_rss_time_cost_trend(verdict):
    means = []
    for lam in TIME_COST_LAMBDAS:
        means.append(mean_completed(cell(Strategy.RSS, lam, 0.25, DEFAULT_TIME_BUDGET, TREND)))
    at_1200 = mean_completed(cell(Strategy.RSS, 1200, 0.25, DEFAULT_TIME_BUDGET, FULL))
    increasing = all(b > a for a, b in zip(means, means[1:]))
    ok = increasing and at_1200 > 100.0
    verdict(
        "C6a RSS time cost rises with flow, >100 s at 1200",
        ok,
        " ".join(f"{lam}:{m:.1f}" for lam, m in zip(TIME_COST_LAMBDAS, means)) + f"; at 1200 ({FULL}) {at_1200:.1f} s",
    )
    assert ok


def test_c6b_new_time_cost(verdict):
    m = mean_completed(cell(Strategy.NEW, 1200, 0.25, DEFAULT_TIME_BUDGET, FULL))
    ok = m < 60.0
    verdict("C6b new strategy <60 s at 1200 veh/h, p=0.25", ok, f"mean {m:.2f} s over {FULL} trials")
    assert ok


def _success_table():
    top = max(SUCCESS_BUDGETS)
    table = {}
    for lam in (600, 1200):
        rss = cell(Strategy.RSS, lam, CONSENT_SWEEP[0], top, SUCCESS_TRIALS)
        for p in CONSENT_SWEEP:
            new = cell(Strategy.NEW, lam, p, top, SUCCESS_TRIALS)
            for b in SUCCESS_BUDGETS:
                table[(lam, p, b)] = (_rate_within(new, b), _rate_within(rss, b))
    return table


def _rate_within(results, budget):
    ok = sum(1 for t, o in results if t is not None and t <= budget + 1e-9 and o == Outcome.STATE1.value)
    return ok / len(results)


def test_c6c_new_dominates_rss(verdict):
    table = _success_table()
    bad = [(k, v) for k, v in table.items() if v[0] < v[1]]
    worst = min(table.items(), key=lambda kv: kv[1][0] - kv[1][1])
    ok = not bad
    verdict(
        "C6c new success rate >= RSS in every cell",
        ok,
        f"{len(table) - len(bad)}/{len(table)} cells hold; tightest {worst[0]}: new {worst[1][0]:.3f} vs rss {worst[1][1]:.3f}",
    )
    assert ok


def test_c6d_new_success_at_180(verdict):
    table = _success_table()
    rates = {p: table[(1200, p, 180)][0] for p in CONSENT_SWEEP}
    ok = all(r >= 0.60 for r in rates.values())
    verdict("C6d new success >= 0.60 at 1200 veh/h, 180 s", ok,
            ", ".join(f"p={p}: {r:.3f}" for p, r in rates.items()))
    assert ok


# -- criterion 7 -------------------------------------------------------------------


def test_c7_failure_distribution(verdict):
    t0 = time.perf_counter()
    dist = {}
    for strategy in Strategy:
        for lam in (600, 1200):
            dist[(strategy, lam)] = shares(cell(strategy, lam, 1.0, DEFAULT_FAILURE_BUDGET, FULL, failure=True))
    elapsed = time.perf_counter() - t0
    s1, s2, s3 = Outcome.STATE1, Outcome.STATE2, Outcome.STATE3
    new, rss = dist[(Strategy.NEW, 1200)], dist[(Strategy.RSS, 1200)]
    targets = {Strategy.NEW: (0.7338, 0.2658), Strategy.RSS: (0.5432, 0.4562)}
    checks = [
        dist[(Strategy.NEW, 600)][s3] == 0.0,
        dist[(Strategy.RSS, 600)][s3] == 0.0,
        new[s1] > rss[s1],
        rss[s2] > new[s2],
        elapsed < 600.0,
    ]
    for strategy, (t1, t2) in targets.items():
        d = dist[(strategy, 1200)]
        checks += [abs(d[s1] - t1) <= 0.05, abs(d[s2] - t2) <= 0.05, d[s3] <= 0.002]
    ok = all(checks)
    verdict(
        "C7 failure outcome distribution",
        ok,
        "; ".join(
            f"{s.value}@{lam}: {d[s1]:.2%}/{d[s2]:.2%}/{d[s3]:.2%}" for (s, lam), d in dist.items()
        ) + f" ({elapsed:.0f} s)",
    )
    assert ok


# -- criterion 8 -------------------------------------------------------------------


def test_c8_determinism_across_jobs(verdict):
    base = dict(kind=ExperimentKind.FAILURE_SAFETY, lambda_values=(600, 1200), budgets=(180.0,), trials=200,
                seed=11)
    outputs = [format_results(run_failure_experiment(ExperimentSpec(**base, jobs=j))) for j in (1, 1, 3)]
    ok = outputs[0] == outputs[1] == outputs[2]
    verdict("C8 byte-identical output for re-runs and job counts", ok, "jobs 1, 1 and 3 compared")
    assert ok


# -- criterion 9 -------------------------------------------------------------------


def test_c9_elude_exceeds_merging_time(verdict):
    rows = []
    for t_merging in (0.5, 1.0, 1.5):
        for v in (10.0, 20.0, 25.0):
            f = forbidden_distance(v, v, P.rho_human, P)
            rows.append((t_merging, v, elude_time(v, v, t_merging, f, None, P)))
    ok = all(t_elude > t_m for t_m, _, t_elude in rows)
    verdict(
        "C9 elude time exceeds merging time",
        ok,
        ", ".join(f"t={t_m} v={v:.0f}: {te:.2f} s" for t_m, v, te in rows),
    )
    assert ok
