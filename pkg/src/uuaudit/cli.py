"""Command-line entry points.

Subcommands: ``search`` (one strategy run with a simulated oracle), ``mc``
(Monte Carlo strategy comparison), ``profile`` (overconfidence profile),
``report`` (metrics from a saved trace), and ``serve`` (labeling service).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .dataset import load_testset
from .errors import UUAuditError
from .evaluation import (
    monte_carlo,
    overconfidence_profile,
    read_trace_report,
    write_mc_csv,
    write_mc_gnuplot,
    write_mc_json,
)
from .search import STRATEGIES, SearchConfig, make_simulated_oracle, run_strategy, write_trace

DEFAULT_PORT = 8000
PORT_ENV_VAR = "UUAUDIT_PORT"


def _add_dataset_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("data", help="test set file (.csv or .jsonl)")
    parser.add_argument("--critical-class", default=None,
                        help="restrict discoveries to this predicted class")


def _add_search_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--budget", type=int, default=100)
    parser.add_argument("--tau", type=float, default=0.65)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--estimator", choices=["prior", "logistic", "cluster"],
                        default=None, help="override the strategy's phi estimator")
    parser.add_argument("--clusters", type=int, default=10)
    parser.add_argument("--exploration", type=float, default=1.0)
    parser.add_argument("--restrict-candidates", action="store_true",
                        help="apply the tau filter to the fl search too")
    parser.add_argument("--allow-below-tau", action="store_true",
                        help="let the mu search continue below tau")
    parser.add_argument("--include-intercept", action="store_true",
                        help="add a free intercept to the logistic phi model")


def _config_from_args(args: argparse.Namespace, budget: int | None = None) -> SearchConfig:
    return SearchConfig(
        budget=budget if budget is not None else args.budget,
        tau=args.tau,
        seed=args.seed,
        estimator=args.estimator,
        clusters=args.clusters,
        exploration=args.exploration,
        restrict_candidates=args.restrict_candidates,
        allow_below_tau=args.allow_below_tau,
        include_intercept=args.include_intercept,
    )


def _cmd_search(args: argparse.Namespace) -> int:
    ts = load_testset(args.data, critical_class=args.critical_class)
    cfg = _config_from_args(args)
    oracle = make_simulated_oracle(ts)
    trace = run_strategy(ts, oracle, cfg, args.strategy)
    if args.out:
        write_trace(trace, args.out)
    else:
        sys.stdout.write(trace.to_jsonl())
    if trace.early_stopped:
        print(f"early stop: {trace.stop_reason}", file=sys.stderr)
    return 0


def _cmd_mc(args: argparse.Namespace) -> int:
    ts = load_testset(args.data, critical_class=args.critical_class)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for s in strategies:
        if s not in STRATEGIES:
            raise UUAuditError(f"unknown strategy {s!r}; expected one of {STRATEGIES}")
    cfg = _config_from_args(args, budget=args.budget)
    summaries = monte_carlo(
        ts, strategies, n=args.n, budget=args.budget, reps=args.reps,
        seed=args.seed, base_cfg=cfg,
    )
    out = Path(args.out)
    if args.format == "csv":
        write_mc_csv(summaries, out)
    elif args.format == "json":
        write_mc_json(summaries, out)
    else:
        write_mc_gnuplot(summaries, out)
    return 0


def _cmd_profile(args: argparse.Namespace) -> int:
    ts = load_testset(args.data, critical_class=args.critical_class)
    profile = overconfidence_profile(
        ts, lam=args.lam, smoother=args.smoother, bins=args.bins
    )
    payload = profile.to_json_dict()
    if args.format == "json":
        text = json.dumps(payload, indent=2) + "\n"
    else:
        lines = ["confidence,estimated_accuracy,overconfidence,support"]
        for i in range(len(profile.grid)):
            lines.append(
                f"{profile.grid[i]},{profile.estimated_accuracy[i]},"
                f"{profile.overconfidence[i]},{profile.support[i]}"
            )
        text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    text = read_trace_report(args.trace, args.data, args.critical_class)
    if args.format == "json":
        payload = json.dumps(text, indent=2) + "\n"
    elif args.format == "csv":
        lines = ["step,id,confidence,phi,label,is_uu,W,gain"]
        for s in text["steps"]:
            lines.append(
                f"{s['b']},{s['id']},{s['c']},{s['phi']},{s['label']},"
                f"{str(s['is_uu']).lower()},{s['W']},{s['gain']}"
            )
        payload = "\n".join(lines) + "\n"
    else:
        lines = ["# step facility_gain coverage_utility"]
        for i in range(len(text["facility_gain"])):
            lines.append(
                f"{i + 1} {text['facility_gain'][i]} {text['coverage_utility'][i]}"
            )
        payload = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    port = args.port if args.port is not None else int(
        os.environ.get(PORT_ENV_VAR, DEFAULT_PORT)
    )
    app = create_app(data_dir=args.data_dir, log_dir=args.log_dir, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uuaudit",
        description="Audit classifier predictions for overconfident unknown unknowns",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_search = sub.add_parser("search", help="run one query strategy with a simulated oracle")
    _add_dataset_arg(p_search)
    p_search.add_argument("--strategy", choices=list(STRATEGIES), default="fl")
    _add_search_args(p_search)
    p_search.add_argument("--out", default=None, help="trace JSONL path (default stdout)")
    p_search.set_defaults(func=_cmd_search)

    p_mc = sub.add_parser("mc", help="Monte Carlo comparison of strategies")
    _add_dataset_arg(p_mc)
    p_mc.add_argument("--strategies", default="fl,mu,cov,bandit")
    p_mc.add_argument("--reps", type=int, default=1000)
    p_mc.add_argument("--n", type=int, default=1000)
    _add_search_args(p_mc)
    p_mc.add_argument("--format", choices=["csv", "json", "gnuplot"], default="csv")
    p_mc.add_argument("--out", required=True)
    p_mc.set_defaults(func=_cmd_mc)

    p_profile = sub.add_parser("profile", help="overconfidence profile of a labeled test set")
    _add_dataset_arg(p_profile)
    p_profile.add_argument("--smoother", choices=["spline", "binned"], default="spline")
    p_profile.add_argument("--lam", type=float, default=None,
                           help="spline penalty (default: generalized cross-validation)")
    p_profile.add_argument("--bins", type=int, default=20)
    p_profile.add_argument("--format", choices=["csv", "json"], default="json")
    p_profile.add_argument("--out", default=None)
    p_profile.set_defaults(func=_cmd_profile)

    p_report = sub.add_parser("report", help="metrics from a saved trace")
    p_report.add_argument("trace", help="trace JSONL file")
    _add_dataset_arg(p_report)
    p_report.add_argument("--format", choices=["json", "csv", "gnuplot"], default="json")
    p_report.add_argument("--out", default=None)
    p_report.set_defaults(func=_cmd_report)

    p_serve = sub.add_parser("serve", help="start the labeling session service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=None,
                         help=f"default: ${PORT_ENV_VAR} or {DEFAULT_PORT}")
    p_serve.add_argument("--data-dir", required=True)
    p_serve.add_argument("--log-dir", default="./sessions")
    p_serve.add_argument("--ui-dir", default=None, help="static frontend to serve at /")
    p_serve.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UUAuditError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
