"""Batch command-line entry points.

Four subcommands: ``test`` runs any registered test on a CSV file,
``simulate`` runs a power-study config, ``serve`` launches the live
session service, and ``calibrate`` runs the null-calibration suite.
stdout carries machine-parseable JSON only; diagnostics go to stderr.
Exit codes: 0 success, 1 runtime failure, 2 usage or schema errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .classic import EStatVariant
from .data import load_block_csv, load_paired_csv, load_unpaired_csv
from .errors import ConfigError, RankbetError, SchemaError
from .rng import stream_rng
from .simulate import SimulationConfig, TestSpec, design_kind, estimate_power, export_results, run_calibration

TEST_TAGS = (
    "auto-ibet",
    "seq-bet",
    "covadj-wilcoxon",
    "linear-cate",
    "signed-rank",
    "kruskal-wallis",
    "friedman",
    "i-kw",
    "i-friedman",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rankbet",
        description="Sequential betting tests of the global null of no treatment effect.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_test = sub.add_parser("test", help="run a single test on a CSV dataset")
    p_test.add_argument("--file", required=True, help="CSV path (unpaired: y,a,x1..xd[,mu]; block: block_id,y,a,x_*)")
    p_test.add_argument("--test", required=True, dest="tag", choices=TEST_TAGS, help="test tag")
    p_test.add_argument("--alpha", type=float, default=0.05)
    p_test.add_argument("--seed", type=int, default=0)
    p_test.add_argument("--gamma", type=float, default=0.1, help="holdout ratio for betting tests")
    p_test.add_argument("--b", type=int, default=200, help="permutation replicates")
    p_test.add_argument("--estimator", choices=("least-squares", "huber-robust"), default="least-squares")
    p_test.add_argument("--interactions", action=argparse.BooleanOptionalAction, default=True,
                        help="include second-order interactions in the design")
    p_test.add_argument("--quadratic-term", type=int, default=None, metavar="COL",
                        help="add the square of covariate COL (1-based) to the design")
    p_test.add_argument("--e-stat", default="diff_in_pred_error",
                        choices=[v.value for v in EStatVariant],
                        help="evidence-score variant for --test signed-rank")
    p_test.add_argument("--e-stat-model", default="knn", choices=("knn", "linear"))
    p_test.add_argument("--warmup", type=int, default=50, help="seq-bet warm-up size")
    p_test.add_argument("--fixed-sum-m", type=int, default=None,
                        help="treat the design as completely randomized with m treated")
    p_test.add_argument("--format", choices=("auto", "unpaired", "paired", "block"),
                        default="auto", help="CSV schema (auto: block for i-friedman, else unpaired)")
    p_test.add_argument("--paired-transform", choices=("pseudo", "signed-diff"), default="pseudo",
                        help="how paired rows reduce to pseudo subjects")

    p_sim = sub.add_parser("simulate", help="run a power-study config")
    p_sim.add_argument("--config", required=True, help="JSON config path")
    p_sim.add_argument("--out", required=True, help="output CSV path")
    p_sim.add_argument("--jobs", type=int, default=1)

    p_serve = sub.add_parser("serve", help="launch the live session service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8710)
    p_serve.add_argument("--state-dir", default=None, help="event-log directory (omit for in-memory)")
    p_serve.add_argument("--token", default=None, help="require this bearer token")
    p_serve.add_argument("--ui-dir", default=None, help="serve a built betting console from this directory under /ui")

    p_cal = sub.add_parser("calibrate", help="null-calibration suite for the whole test roster")
    p_cal.add_argument("--reps", type=int, default=500)
    p_cal.add_argument("--alpha", type=float, default=0.05)
    p_cal.add_argument("--seed", type=int, default=0)
    p_cal.add_argument("--n", type=int, default=200)
    p_cal.add_argument("--jobs", type=int, default=1)
    return parser


def _test_params(args: argparse.Namespace) -> dict:
    params: dict = {
        "estimator": args.estimator,
        "interactions": args.interactions,
        "gamma": args.gamma,
        "b": args.b,
        "seed": args.seed,
    }
    if args.quadratic_term is not None:
        params["extra_terms"] = [[args.quadratic_term - 1, 2]]
    if args.tag == "signed-rank":
        params["variant"] = args.e_stat
        params["model"] = args.e_stat_model
    if args.tag == "seq-bet":
        params["warmup"] = args.warmup
    if args.fixed_sum_m is not None:
        params["fixed_sum_m"] = args.fixed_sum_m
    return params


def cmd_test(args: argparse.Namespace) -> int:
    from .simulate import run_test  # registry shared with the harness

    path = Path(args.file)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return 2
    fmt = args.format
    if fmt == "auto":
        fmt = "block" if design_kind(args.tag) == "blocks-3" else "unpaired"
    try:
        if fmt == "block":
            data = load_block_csv(text)
        elif fmt == "paired":
            from .transforms import pair_to_pseudo, pair_to_signed_diff

            pairs = load_paired_csv(text)
            transform = pair_to_pseudo if args.paired_transform == "pseudo" else pair_to_signed_diff
            data = transform(pairs)
        else:
            data = load_unpaired_csv(text)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2

    spec = TestSpec(args.tag, _test_params(args))
    rng = stream_rng(args.seed, 0)
    outcome = run_test(spec, data, args.alpha, rng)
    doc = {
        "test": args.tag,
        "reject": outcome.reject,
        "p_value": outcome.p_value,
        "statistic": outcome.statistic,
        "alpha": args.alpha,
        "seed": args.seed,
    }
    if outcome.stop_time is not None:
        doc["stop_time"] = outcome.stop_time
    print(json.dumps(doc))
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        config = SimulationConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, KeyError, RankbetError) as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return 2
    table = estimate_power(config, jobs=args.jobs)
    export_results(table, args.out)
    if table.total_failures:
        print(f"{table.total_failures} repetition run(s) failed and were excluded", file=sys.stderr)
    print(json.dumps({"rows": len(table.rows), "out": str(args.out), "failures": table.total_failures}))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(state_dir=args.state_dir, token=args.token, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    if args.reps < 1:
        print("--reps must be positive", file=sys.stderr)
        return 2
    report = run_calibration(
        reps=args.reps, alpha=args.alpha, seed=args.seed, n=args.n, jobs=args.jobs
    )
    print(json.dumps(report))
    return 0 if report["pass"] else 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "test": cmd_test,
        "simulate": cmd_simulate,
        "serve": cmd_serve,
        "calibrate": cmd_calibrate,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RankbetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - uniform runtime-failure exit code
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
