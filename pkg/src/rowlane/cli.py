"""Command-line entry point: envelope calculator, single trials and the three experiments."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from rowlane.config import ConfigError, RunConfig, load_config
from rowlane.envelope import DomainError, elude_time, envelope_pair, forbidden_distance, negotiable_boundary
from rowlane.experiments import (
    CONSENT_SWEEP,
    DEFAULT_FAILURE_BUDGET,
    DEFAULT_TIME_BUDGET,
    SUCCESS_BUDGETS,
    TIME_COST_LAMBDAS,
    ExperimentKind,
    ExperimentSpec,
    check_dominance,
    emit_results,
    format_results,
    run_failure_experiment,
    run_success_rate_experiment,
    run_time_cost_experiment,
)
from rowlane.sim import Strategy, run_trial
from rowlane.traffic import TrafficConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _strategies(choice: str) -> tuple:
    if choice == "both":
        return (Strategy.NEW, Strategy.RSS)
    return (Strategy(choice),)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rowlane", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file with run defaults")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="write CSV here instead of stdout")

    env = sub.add_parser("envelope", parents=[common], help="print right-of-way distances for given speeds")
    env.add_argument("--v-f2", type=float, default=20.0)
    env.add_argument("--v-ego", type=float, default=20.0)
    env.add_argument("--t-merging", type=float, default=1.0)

    trial = sub.add_parser("trial", parents=[common], help="run one trial and print its event log")
    trial.add_argument("--lambda", dest="lambdas", type=float, nargs=1, default=[1200.0])
    trial.add_argument("--strategy", choices=["new", "rss"], default="new")
    trial.add_argument("--consent", type=float, nargs=1, default=[0.5])
    trial.add_argument("--budget", type=float, nargs=1, default=[DEFAULT_FAILURE_BUDGET])
    trial.add_argument("--trial-index", type=int, default=0)

    for name, lambdas, budgets, consents, helptext in (
        ("exp-time", TIME_COST_LAMBDAS, (DEFAULT_TIME_BUDGET,), (0.25,), "mean time cost versus traffic flow"),
        ("exp-success", (600, 1200), SUCCESS_BUDGETS, CONSENT_SWEEP, "success rate within time budgets"),
        ("exp-failure", (600, 1200), (DEFAULT_FAILURE_BUDGET,), (1.0,), "outcomes under negotiation failure"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--lambda", dest="lambdas", type=float, nargs="+", default=list(lambdas))
        p.add_argument("--budget", type=float, nargs="+", default=list(budgets))
        p.add_argument("--consent", type=float, nargs="+", default=list(consents))
        p.add_argument("--strategy", choices=["new", "rss", "both"], default="both")
        p.add_argument("--trials", type=int)
        p.add_argument("--jobs", type=int)
    return parser


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for key in ("seed", "trials", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return replace(cfg, **overrides)


def _write(text: str, out) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_envelope(args, cfg: RunConfig) -> int:
    params = cfg.params()
    pair = envelope_pair(args.v_f2, args.v_ego, params)
    lines = [
        f"forbidden_f2={pair.forbidden_len:.6f}",
        f"negotiable_f2={pair.negotiable_len:.6f}",
        f"boundary_f2={negotiable_boundary(args.v_f2, args.v_ego, params):.6f}",
        f"forbidden_ego_behind_leader={forbidden_distance(args.v_ego, args.v_f2, params.rho, params):.6f}",
        f"elude_time={elude_time(args.v_ego, args.v_f2, args.t_merging, pair.forbidden_len, None, params):.6f}",
    ]
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _cmd_trial(args, cfg: RunConfig) -> int:
    traffic = TrafficConfig(args.lambdas[0], sigma=cfg.sigma, v_l2_mean=cfg.v_l2, seed=cfg.seed)
    rec = run_trial(
        Strategy(args.strategy),
        traffic,
        p_consent=args.consent[0],
        budget=args.budget[0],
        trial_index=args.trial_index,
        sim_cfg=cfg.sim_config(),
    )
    lines = [ev.to_line() for ev in rec.events]
    time_cost = "none" if rec.time_cost is None else f"{rec.time_cost:.1f}"
    lines.append(
        f"# outcome={rec.outcome.value} time_cost={time_cost} "
        f"gaps={rec.n_gaps_inspected} negotiations={rec.n_negotiations}"
    )
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


_EXPERIMENTS = {
    "exp-time": (ExperimentKind.TIME_COST, run_time_cost_experiment),
    "exp-success": (ExperimentKind.SUCCESS_RATE, run_success_rate_experiment),
    "exp-failure": (ExperimentKind.FAILURE_SAFETY, run_failure_experiment),
}


def _cmd_experiment(args, cfg: RunConfig) -> int:
    kind, runner = _EXPERIMENTS[args.command]
    spec = ExperimentSpec(
        kind=kind,
        lambda_values=tuple(args.lambdas),
        budgets=tuple(args.budget),
        strategies=_strategies(args.strategy),
        p_consent_values=tuple(args.consent),
        trials=cfg.trials,
        seed=cfg.seed,
        output_path=args.out,
        sim_cfg=cfg.sim_config(),
        sigma=cfg.sigma,
        v_l2=cfg.v_l2,
        jobs=cfg.jobs,
    )
    rows = runner(spec)
    text = format_results(rows)
    if args.out:
        emit_results(rows, args.out)
    else:
        sys.stdout.write(text)
    if kind is ExperimentKind.SUCCESS_RATE:
        for cell in check_dominance(rows):
            print(f"warning: RSS ahead of new strategy at lambda={cell[0]} budget={cell[1]}", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _run_config(args)
        if args.command == "envelope":
            return _cmd_envelope(args, cfg)
        if args.command == "trial":
            return _cmd_trial(args, cfg)
        return _cmd_experiment(args, cfg)
    except (ConfigError, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
