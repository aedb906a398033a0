#!/usr/bin/env python3
"""
Command-line front end: fit, predict, parity, friedman, bench.

Exit codes: 0 on success, 1 on data/model errors, 2 on flag errors.
"""

import argparse
import logging
import sys
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy.special import expit

from dataset import (CLASSIFICATION, DEFAULT_MAX_THRESHOLDS, TASKS, DatasetError, build_propositions,
                     load_csv, parse_columns)
from evalharness import DEFAULT_LAMBDA_GRID, BenchTask, EvalConfig, run_benchmark, run_lambda_sweep, write_sweep
from learners import GREEDY, LEARNERS, OPTIMAL, BoostConfig, RuleBooster, RuleEnsemble
from loss import ObjectiveDomainError
from search import SearchConfig
from synthgen import DEFAULT_SIGMA, Friedman1Config, ParityConfig, gen_friedman1, gen_noisy_parity

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DATA = 1

# DatasetError, SchemaError, MetricError and SearchError are ValueErrors
DATA_ERRORS = (ValueError, ObjectiveDomainError, OSError)
BUILTIN_PARITY_DIMS = (2, 3)


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def non_negative_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def _add_search_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=1.0,
                        help="Approximation factor in (0, 1]; 1 means exact search")
    parser.add_argument("--time-budget-s", type=float, default=None,
                        help="Per-round search time budget in seconds (none = unlimited)")
    parser.add_argument("--max-thresholds", type=positive_int, default=DEFAULT_MAX_THRESHOLDS,
                        help="Maximum thresholds per numeric feature. Optimal search time grows "
                             "steeply with it; lower it for quick runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Optimal rule boosting",
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Logging verbosity (logs go to stderr)")
    subparsers = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    fit = subparsers.add_parser("fit", help="Fit a rule ensemble on a CSV file", formatter_class=fmt)
    fit.add_argument("--data", required=True, help="Training CSV with a header row")
    fit.add_argument("--target", required=True, help="Name of the target column")
    fit.add_argument("--task", required=True, choices=TASKS, help="Learning task")
    fit.add_argument("--positive-label", default=None,
                     help="Target value encoded as +1 for classification (default: largest label)")
    fit.add_argument("--rules", type=positive_int, default=10, help="Number of boosting rounds")
    fit.add_argument("--lambda", dest="lam", type=non_negative_float, default=0.0,
                     help="L2 regularization of rule weights")
    fit.add_argument("--learner", choices=LEARNERS, default=OPTIMAL, help="Base learner")
    fit.add_argument("--seed", type=int, default=0, help="Random seed")
    fit.add_argument("--model", default="model.json", help="Output model JSON")
    _add_search_flags(fit)

    predict = subparsers.add_parser("predict", help="Score a CSV file with a saved model", formatter_class=fmt)
    predict.add_argument("--model", required=True, help="Model JSON written by fit")
    predict.add_argument("--data", required=True, help="CSV with the model's feature columns")
    predict.add_argument("--out", default=None, help="Output CSV (default: stdout)")

    parity = subparsers.add_parser("parity", help="Generate a noisy parity dataset", formatter_class=fmt)
    parity.add_argument("--d", type=int, default=3, help="Number of features")
    parity.add_argument("--n", type=int, default=800, help="Number of rows")
    parity.add_argument("--sigma", type=float, default=DEFAULT_SIGMA, help="Feature noise level")
    parity.add_argument("--seed", type=int, default=0, help="Random seed")
    parity.add_argument("--out", required=True, help="Output CSV")

    friedman = subparsers.add_parser("friedman", help="Generate a Friedman #1 dataset", formatter_class=fmt)
    friedman.add_argument("--n", type=int, default=500, help="Number of rows")
    friedman.add_argument("--d", type=int, default=10, help="Number of features (at least 5)")
    friedman.add_argument("--noise-sd", type=float, default=1.0, help="Target noise standard deviation")
    friedman.add_argument("--seed", type=int, default=0, help="Random seed")
    friedman.add_argument("--out", required=True, help="Output CSV")

    bench = subparsers.add_parser("bench", help="Compare learners on size/score curves", formatter_class=fmt)
    bench.add_argument("--suite", choices=["parity", "none"], default="parity",
                       help="Builtin synthetic suite (noisy parity with d in {2, 3}, 2^d rules)")
    bench.add_argument("--csv", action="append", default=[], metavar="PATH:TARGET:TASK",
                       help="Extra dataset; may be repeated")
    bench.add_argument("--learners", nargs="+", choices=LEARNERS, default=[OPTIMAL, GREEDY],
                       help="Learners to compare")
    bench.add_argument("--repetitions", type=positive_int, default=5, help="Random train/test splits")
    bench.add_argument("--max-rules", type=positive_int, default=10,
                       help="Largest ensemble size for CSV datasets")
    bench.add_argument("--lambda-grid", nargs="+", type=non_negative_float, default=list(DEFAULT_LAMBDA_GRID),
                       help="Candidate regularization values")
    bench.add_argument("--train-frac", type=float, default=0.8, help="Training share of every split")
    bench.add_argument("--sigma", type=float, default=DEFAULT_SIGMA, help="Noise level of the parity suite")
    bench.add_argument("--seed", type=int, default=0, help="Seed of the first repetition")
    bench.add_argument("--jobs", type=positive_int, default=1, help="Parallel benchmark cells")
    bench.add_argument("--out-csv", default="report.csv", help="Report CSV")
    bench.add_argument("--out-json", default="report.json", help="Report JSON")
    bench.add_argument("--sweep-lambda", default=None, metavar="PATH",
                       help="Also write optimal-learner fit time per lambda to this CSV")
    _add_search_flags(bench)
    return parser


def _search_config(args) -> SearchConfig:
    return SearchConfig(alpha=args.alpha, time_budget=args.time_budget_s)


def cmd_fit(args, parser) -> int:
    try:
        cfg = BoostConfig(k=args.rules, lam=args.lam, learner=args.learner,
                          search=_search_config(args), seed=args.seed)
    except ValidationError as e:
        parser.error(str(e))

    ds = load_csv(args.data, args.target, args.task, args.positive_label)
    props = build_propositions(ds, args.max_thresholds)
    booster = RuleBooster(cfg)
    ens = booster.fit(ds, props)

    print("round\tobjective\tguarantee\trule")
    for t, (info, rule) in enumerate(zip(booster.rounds, ens.rules)):
        guarantee = "n/a" if info.guarantee is None else f"{info.guarantee:.4f}"
        print(f"{t + 1}\t{info.objective:.6g}\t{guarantee}\t{rule.describe()}")

    ens.save(args.model)
    print(f"Wrote {len(ens.rules)} rules to {args.model}")
    return EXIT_OK


def _prediction_columns(frame: pd.DataFrame, ens: RuleEnsemble) -> Dict[str, np.ndarray]:
    """Typed input columns; features used in equality tests keep their raw text"""
    columns = {col.name: col.values for col in parse_columns(frame)}
    for rule in ens.rules:
        for cond in rule.conditions:
            if cond.op in ("==", "!=") and cond.feature in frame.columns:
                columns[cond.feature] = frame[cond.feature].to_numpy(dtype=object).astype(str)
    return columns


def cmd_predict(args, parser) -> int:
    try:
        ens = RuleEnsemble.load(args.model)
    except (ValidationError, ValueError) as e:
        raise DatasetError(f"Invalid model file {args.model}: {e}") from e
    path = Path(args.data)
    if not path.is_file():
        raise DatasetError(f"Data file not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[], encoding="utf-8")

    scores = ens.predict(_prediction_columns(frame, ens)) if len(frame) else np.zeros(0)
    out = pd.DataFrame({"row_id": np.arange(len(frame)), "score": scores})
    if ens.task == CLASSIFICATION:
        out["proba"] = expit(scores)

    if args.out:
        out.to_csv(args.out, index=False, lineterminator="\n")
        logger.info(f"Wrote {len(out)} predictions to {args.out}")
    else:
        out.to_csv(sys.stdout, index=False, lineterminator="\n")
    return EXIT_OK


def _write_dataset(ds, out: str) -> None:
    ds.to_frame().to_csv(out, index=False, lineterminator="\n")
    logger.info(f"Wrote {ds.n} rows to {out}")


def cmd_parity(args, parser) -> int:
    try:
        cfg = ParityConfig(d=args.d, n=args.n, sigma=args.sigma, seed=args.seed)
    except ValidationError as e:
        parser.error(str(e))
    _write_dataset(gen_noisy_parity(cfg), args.out)
    return EXIT_OK


def cmd_friedman(args, parser) -> int:
    try:
        cfg = Friedman1Config(n=args.n, d=args.d, noise_sd=args.noise_sd, seed=args.seed)
    except ValidationError as e:
        parser.error(str(e))
    _write_dataset(gen_friedman1(cfg), args.out)
    return EXIT_OK


def _parse_csv_source(source: str, parser) -> BenchTask:
    parts = source.rsplit(":", 2)
    if len(parts) != 3 or parts[2] not in TASKS:
        parser.error(f"--csv expects PATH:TARGET:TASK with TASK in {TASKS}, got '{source}'")
    path, target, task = parts
    return BenchTask(Path(path).stem, partial(load_csv, path, target, task))


def bench_tasks(args, parser) -> List[BenchTask]:
    tasks = []
    if args.suite == "parity":
        for d in BUILTIN_PARITY_DIMS:
            cfg = ParityConfig(d=d, n=100 * 2 ** d, sigma=args.sigma, seed=args.seed)
            tasks.append(BenchTask(f"parity_d{d}", partial(gen_noisy_parity, cfg), max_rules=2 ** d))
    tasks.extend(_parse_csv_source(source, parser) for source in args.csv)
    if not tasks:
        parser.error("bench needs the builtin suite or at least one --csv dataset")
    return tasks


def cmd_bench(args, parser) -> int:
    try:
        cfg = EvalConfig(train_frac=args.train_frac, repetitions=args.repetitions, max_rules=args.max_rules,
                         lambda_grid=tuple(args.lambda_grid), learners=tuple(dict.fromkeys(args.learners)),
                         seed=args.seed, max_thresholds=args.max_thresholds, search=_search_config(args),
                         jobs=args.jobs)
    except ValidationError as e:
        parser.error(str(e))
    tasks = bench_tasks(args, parser)

    report = run_benchmark(cfg, tasks)
    report.write(args.out_csv, args.out_json)

    areas = report.curve_areas()
    if not areas.empty:
        table = areas.pivot(index="dataset", columns="learner", values="curve_area")
        print("Mean size/score curve area")
        print(table.to_string(float_format=lambda v: f"{v:.4f}"))
    for failure in report.failures:
        print(f"FAILED {failure['dataset']}/{failure['learner']}/seed={failure['seed']}: {failure['error']}")

    if args.sweep_lambda:
        write_sweep(run_lambda_sweep(tasks, cfg.lambda_grid, cfg), args.sweep_lambda)
        print(f"Wrote lambda sweep to {args.sweep_lambda}")
    return EXIT_OK if report.points else EXIT_DATA


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "parity": cmd_parity,
    "friedman": cmd_friedman,
    "bench": cmd_bench,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, parser)
    except DATA_ERRORS as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
