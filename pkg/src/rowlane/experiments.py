"""Monte Carlo experiments over seeded trials, and their CSV output.

Every trial draws its randomness from ``(seed, trial index)`` only, so a
cell's result does not depend on how trials are spread over workers.
Within a cell the two strategies see the same traffic (common random
numbers), which sharpens the comparisons between them.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import multiprocessing as mp
from dataclasses import dataclass, field
from pathlib import Path

from rowlane.envelope import KinematicParams
from rowlane.sim import Outcome, SimConfig, Strategy, run_trial, sample_failure
from rowlane.traffic import RNG_ID, TrafficConfig

DEFAULT_TIME_BUDGET = 1200.0
DEFAULT_FAILURE_BUDGET = 180.0
TIME_COST_LAMBDAS = (200, 400, 600, 800, 1000, 1200, 1400, 1600)
SUCCESS_BUDGETS = (20, 40, 60, 80, 100, 120, 140, 160, 180)
CONSENT_SWEEP = (0.25, 0.5, 0.75, 1.0)

CSV_COLUMNS = (
    "experiment",
    "strategy",
    "lambda",
    "p_consent",
    "budget",
    "trials",
    "mean_time_cost",
    "success_rate",
    "state1",
    "state2",
    "state3",
    "seed",
    "rng_id",
)


class ExperimentKind(enum.Enum):
    TIME_COST = "time_cost"
    SUCCESS_RATE = "success_rate"
    FAILURE_SAFETY = "failure_safety"
    SINGLE_TRIAL = "single_trial"
    ENVELOPE = "envelope"


@dataclass(frozen=True)
class ExperimentSpec:
    kind: ExperimentKind
    lambda_values: tuple = TIME_COST_LAMBDAS
    budgets: tuple = (DEFAULT_TIME_BUDGET,)
    strategies: tuple = (Strategy.NEW, Strategy.RSS)
    p_consent_values: tuple = (0.25,)
    trials: int = 10_000
    seed: int = 0
    output_path: str | None = None
    sim_cfg: SimConfig = field(default_factory=SimConfig)
    sigma: float = 0.8
    v_l2: float = 20.0
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.trials <= 0:
            raise ValueError("trials must be positive")
        if not self.lambda_values or any(lam <= 0 for lam in self.lambda_values):
            raise ValueError("traffic flows must be positive")
        if not self.budgets or any(b <= 0 for b in self.budgets):
            raise ValueError("budgets must be positive")
        if any(not 0.0 <= p <= 1.0 for p in self.p_consent_values):
            raise ValueError("consent probabilities must lie in [0, 1]")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")

    @property
    def params(self) -> KinematicParams:
        return self.sim_cfg.params


@dataclass(frozen=True)
class AggregateRow:
    experiment: str
    strategy: str
    lambda_flow: float
    p_consent: float | None
    budget: float | None
    trials: int
    mean_time_cost: float
    success_rate: float
    state1: float
    state2: float
    state3: float
    seed: int
    rng_id: str = RNG_ID

    def as_record(self) -> list[str]:
        return [
            self.experiment,
            self.strategy,
            _num(self.lambda_flow),
            _num(self.p_consent),
            _num(self.budget),
            str(self.trials),
            _num(self.mean_time_cost),
            _num(self.success_rate),
            _num(self.state1),
            _num(self.state2),
            _num(self.state3),
            str(self.seed),
            self.rng_id,
        ]


def _num(value) -> str:
    if value is None:
        return ""
    return f"{value:.6f}"


# -- trial fan-out ------------------------------------------------------------------


@dataclass(frozen=True)
class _CellJob:
    strategy: Strategy
    lambda_flow: float
    p_consent: float
    budget: float
    failure: bool
    seed: int
    sim_cfg: SimConfig
    sigma: float
    v_l2: float


def _run_chunk(args) -> list[tuple[float | None, str]]:
    job, start, stop = args
    traffic = TrafficConfig(job.lambda_flow, sigma=job.sigma, v_l2_mean=job.v_l2, seed=job.seed)
    out = []
    for i in range(start, stop):
        failure = sample_failure(job.seed, i) if job.failure else None
        rec = run_trial(
            job.strategy,
            traffic,
            failure=failure,
            p_consent=job.p_consent,
            budget=job.budget,
            trial_index=i,
            sim_cfg=job.sim_cfg,
            record_events=False,
        )
        out.append((rec.time_cost, rec.outcome.value))
    return out


def run_cell(job: _CellJob, trials: int, jobs: int = 1) -> list[tuple[float | None, str]]:
    """Per-trial ``(time_cost, outcome)`` in trial order, whatever the worker count."""
    if jobs <= 1 or trials < 2:
        return _run_chunk((job, 0, trials))
    n_chunks = min(trials, jobs * 4)
    bounds = [round(k * trials / n_chunks) for k in range(n_chunks + 1)]
    tasks = [(job, bounds[k], bounds[k + 1]) for k in range(n_chunks)]
    with mp.get_context("spawn").Pool(jobs) as pool:
        parts = pool.map(_run_chunk, tasks)
    return [item for part in parts for item in part]


def _mean_completed(results, budget: float | None = None) -> float:
    times = [t for t, _ in results if t is not None and (budget is None or t <= budget + 1e-9)]
    return math.fsum(times) / len(times) if times else math.nan


def _job(spec: ExperimentSpec, strategy, lam, p, budget, failure=False) -> _CellJob:
    return _CellJob(strategy, float(lam), float(p), float(budget), failure, spec.seed, spec.sim_cfg,
                    spec.sigma, spec.v_l2)


def _consent_cells(spec: ExperimentSpec, strategy: Strategy):
    # RSS never negotiates, so every consent value shares one simulated cell
    if strategy is Strategy.RSS:
        return [(p, spec.p_consent_values[0]) for p in spec.p_consent_values]
    return [(p, p) for p in spec.p_consent_values]


# -- experiments -----------------------------------------------------------------


def run_time_cost_experiment(spec: ExperimentSpec) -> list[AggregateRow]:
    """Mean completion time per (strategy, flow, consent) over trials that completed within the budget."""
    budget = max(spec.budgets)
    rows = []
    for strategy in spec.strategies:
        for lam in spec.lambda_values:
            cache = {}
            for p_label, p_run in _consent_cells(spec, strategy):
                if p_run not in cache:
                    cache[p_run] = run_cell(_job(spec, strategy, lam, p_run, budget), spec.trials, spec.jobs)
                res = cache[p_run]
                done = sum(1 for t, _ in res if t is not None)
                s1 = sum(1 for _, o in res if o == Outcome.STATE1.value) / len(res)
                s3 = sum(1 for _, o in res if o == Outcome.STATE3.value) / len(res)
                rows.append(AggregateRow(
                    "time_cost", strategy.value, float(lam), p_label, budget, spec.trials,
                    _mean_completed(res), done / len(res), s1, 1.0 - s1 - s3, s3, spec.seed,
                ))
    return rows


def run_success_rate_experiment(spec: ExperimentSpec) -> list[AggregateRow]:
    """Fraction of trials completed within each budget.

    Each cell is simulated once at the largest budget. A trial evolves
    identically up to any earlier time whatever its budget, so it succeeds
    within budget ``b`` exactly when its completion time is at most ``b``.
    """
    top = max(spec.budgets)
    rows = []
    for strategy in spec.strategies:
        for lam in spec.lambda_values:
            cache = {}
            for p_label, p_run in _consent_cells(spec, strategy):
                if p_run not in cache:
                    cache[p_run] = run_cell(_job(spec, strategy, lam, p_run, top), spec.trials, spec.jobs)
                res = cache[p_run]
                s3 = sum(1 for _, o in res if o == Outcome.STATE3.value) / len(res)
                for b in sorted(spec.budgets):
                    ok = sum(
                        1 for t, o in res if t is not None and t <= b + 1e-9 and o == Outcome.STATE1.value
                    ) / len(res)
                    rows.append(AggregateRow(
                        "success_rate", strategy.value, float(lam), p_label, float(b), spec.trials,
                        _mean_completed(res, b), ok, ok, 1.0 - ok - s3, s3, spec.seed,
                    ))
    return rows


def run_failure_experiment(spec: ExperimentSpec) -> list[AggregateRow]:
    """Outcome shares when the target-lane follower breaks its consent in every trial."""
    budget = max(spec.budgets)
    rows = []
    for strategy in spec.strategies:
        for lam in spec.lambda_values:
            res = run_cell(_job(spec, strategy, lam, 1.0, budget, failure=True), spec.trials, spec.jobs)
            n = len(res)
            counts = {o.value: 0 for o in Outcome}
            for _, o in res:
                counts[o] += 1
            s1 = counts[Outcome.STATE1.value] / n
            s3 = counts[Outcome.STATE3.value] / n
            rows.append(AggregateRow(
                "failure_safety", strategy.value, float(lam), None, budget, spec.trials,
                _mean_completed(res), s1, s1, counts[Outcome.STATE2.value] / n, s3, spec.seed,
            ))
    return rows


def check_dominance(rows: list[AggregateRow]) -> list[tuple]:
    """Cells of a success-rate run where RSS beats the new strategy (expected: none)."""
    rss = {(r.lambda_flow, r.budget): r.success_rate for r in rows if r.strategy == Strategy.RSS.value}
    bad = []
    for r in rows:
        if r.strategy == Strategy.NEW.value:
            other = rss.get((r.lambda_flow, r.budget))
            if other is not None and r.success_rate < other:
                bad.append((r.lambda_flow, r.budget, r.p_consent, r.success_rate, other))
    return bad


# -- output ------------------------------------------------------------------------


def format_results(rows: list[AggregateRow]) -> str:
    if not rows:
        raise ValueError("no result rows to write")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.as_record())
    return buf.getvalue()


def emit_results(rows: list[AggregateRow], path) -> Path:
    """Write ``rows`` as CSV (header plus one line per row) and return the path."""
    text = format_results(rows)
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def read_results(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
