"""
Evaluation harness: splits, metrics, size/score curves and the benchmark
protocol comparing optimal and greedy rule boosting.
"""

import hashlib
import json
import logging
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.stats import rankdata

from dataset import CLASSIFICATION, DEFAULT_MAX_THRESHOLDS, Dataset, build_propositions
from learners import GREEDY, OPTIMAL, BoostConfig, RuleBooster, RuleEnsemble
from search import PruneStats, SearchConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CURVE_AREA_DEFINITION = "arithmetic mean of test scores over ensemble sizes k = 1..max_rules"
LAMBDA_SELECTION = "best validation curve area on an 80/20 split of the training part"
DEFAULT_LAMBDA_GRID = (0.0001, 0.001, 0.01, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0)

REPORT_COLUMNS = ["dataset", "learner", "lambda", "seed", "k", "metric", "score", "fit_time_s",
                  "nodes_expanded", "immediate_bound", "immediate_equiv", "propagated_bound",
                  "propagated_equiv"]
TIMING_COLUMNS = ("fit_time_s",)


class MetricError(ValueError):
    pass


def split(ds: Dataset, train_frac: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Seeded shuffle; the first ceil(train_frac * n) rows train, the rest test"""
    if not 0.0 < train_frac < 1.0:
        raise MetricError(f"train_frac must lie in (0, 1), got {train_frac}")
    if ds.n < 2:
        raise MetricError(f"Cannot split {ds.n} rows")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(ds.n)
    n_train = math.ceil(train_frac * ds.n)
    if n_train >= ds.n:
        raise MetricError(f"Degenerate split: {n_train} train rows of {ds.n} leaves an empty test part")
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


def roc_auc(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Probability that a random positive outscores a random negative, ties counting half"""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(labels) > 0
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def r2(preds: Sequence[float], targets: Sequence[float]) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    ss_tot = float(np.sum((targets - targets.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricError("R2 is undefined for constant targets")
    return 1.0 - float(np.sum((targets - preds) ** 2)) / ss_tot


def accuracy(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Share of rows whose score sign matches a {-1, +1} label; score 0 counts as +1"""
    predicted = np.where(np.asarray(scores) >= 0, 1.0, -1.0)
    return float(np.mean(predicted == np.asarray(labels)))


METRICS: Dict[str, Callable] = {"roc_auc": roc_auc, "r2": r2, "accuracy": accuracy}


def default_metric(task: str) -> str:
    return "roc_auc" if task == CLASSIFICATION else "r2"


def size_score_curve(ens: RuleEnsemble, test: Dataset, metric: Union[str, Callable] = None) -> List[Tuple[int, float]]:
    """Score of every prefix ensemble (first k rules), k = 1..len(rules)"""
    metric = METRICS[metric or default_metric(ens.task)] if not callable(metric) else metric
    scores = np.cumsum(ens.rule_outputs(test), axis=0)
    return [(k + 1, metric(scores[k], test.target)) for k in range(len(ens.rules))]


def area_under_size_curve(curve: Sequence[Tuple[int, float]]) -> float:
    if not curve:
        raise MetricError("Cannot take the area under an empty curve")
    return float(np.mean([score for _, score in curve]))


def padded_curve(ens: RuleEnsemble, test: Dataset, max_rules: int, metric: str) -> List[Tuple[int, float]]:
    """
    Curve over k = 1..max_rules. A boosting run that stopped early predicts
    with its full ensemble at every larger size.
    """
    curve = size_score_curve(ens, test, metric)
    if not curve:
        curve = [(1, METRICS[metric](np.zeros(test.n), test.target))]
    last = curve[-1][1]
    return curve[:max_rules] + [(k, last) for k in range(len(curve) + 1, max_rules + 1)]


class EvalConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    train_frac: float = Field(0.8, gt=0.0, lt=1.0)
    repetitions: int = Field(5, ge=1)
    max_rules: int = Field(10, ge=1)
    lambda_grid: Tuple[float, ...] = DEFAULT_LAMBDA_GRID
    learners: Tuple[str, ...] = (OPTIMAL, GREEDY)
    seed: int = 0
    max_thresholds: Optional[int] = Field(DEFAULT_MAX_THRESHOLDS, ge=1)
    search: SearchConfig = Field(default_factory=SearchConfig)
    jobs: int = Field(1, ge=1)

    @field_validator("lambda_grid")
    @classmethod
    def _grid_nonempty(cls, grid):
        if not grid or any(lam < 0 for lam in grid):
            raise ValueError("lambda_grid must be a nonempty list of non-negative values")
        return grid

    @field_validator("learners")
    @classmethod
    def _known_learners(cls, learners):
        if not learners or any(name not in (OPTIMAL, GREEDY) for name in learners):
            raise ValueError(f"learners must be a nonempty subset of {(OPTIMAL, GREEDY)}")
        return learners


@dataclass
class BenchTask:
    name: str
    load: Callable[[], Dataset]
    max_rules: Optional[int] = None


@dataclass(frozen=True)
class CurvePoint:
    dataset: str
    learner: str
    lam: float
    seed: int
    k: int
    metric: str
    score: float
    fit_time_s: float
    nodes_expanded: int
    immediate_bound: int
    immediate_equiv: int
    propagated_bound: int
    propagated_equiv: int

    def as_row(self) -> dict:
        row = asdict(self)
        row["lambda"] = row.pop("lam")
        return {col: row[col] for col in REPORT_COLUMNS}


@dataclass
class Report:
    points: List[CurvePoint] = field(default_factory=list)
    failures: List[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def sorted_points(self) -> List[CurvePoint]:
        return sorted(self.points, key=lambda p: (p.dataset, p.learner, p.seed, p.k, p.lam))

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([p.as_row() for p in self.sorted_points()], columns=REPORT_COLUMNS)

    def curve_areas(self) -> pd.DataFrame:
        """Mean curve area per dataset and learner, averaged over seeds"""
        frame = self.frame()
        if frame.empty:
            return pd.DataFrame(columns=["dataset", "learner", "curve_area", "fit_time_s"])
        per_seed = frame.groupby(["dataset", "learner", "seed"]).agg(
            curve_area=("score", "mean"), fit_time_s=("fit_time_s", "max"))
        return per_seed.groupby(["dataset", "learner"]).mean().reset_index()

    def write(self, csv_path: Union[str, Path], json_path: Union[str, Path]) -> None:
        self.frame().to_csv(csv_path, index=False, lineterminator="\n")
        payload = {
            "schema_version": SCHEMA_VERSION,
            "metadata": self.metadata,
            "rows": [p.as_row() for p in self.sorted_points()],
            "failures": sorted(self.failures, key=lambda f: (f["dataset"], f["learner"], f["seed"])),
        }
        Path(json_path).write_text(json.dumps(payload, indent=2), encoding="utf-8")
        logger.info(f"Report written: {csv_path}, {json_path}")


def dataset_fingerprint(ds: Dataset) -> str:
    """Content hash of a dataset for report metadata"""
    digest = hashlib.md5()
    for col in ds.columns:
        digest.update(col.name.encode())
        digest.update(np.ascontiguousarray(col.values).astype(str).tobytes())
    digest.update(np.ascontiguousarray(ds.target).tobytes())
    return digest.hexdigest()[:16]


def _fit(train: Dataset, learner: str, lam: float, max_rules: int, cfg: EvalConfig) -> Tuple[RuleEnsemble, RuleBooster]:
    props = build_propositions(train, cfg.max_thresholds)
    booster = RuleBooster(BoostConfig(k=max_rules, lam=lam, learner=learner, search=cfg.search, seed=cfg.seed))
    return booster.fit(train, props), booster


def select_lambda(train: Dataset, learner: str, max_rules: int, cfg: EvalConfig, seed: int) -> float:
    """Pick lambda by validation curve area on a split carved from the training part"""
    if len(cfg.lambda_grid) == 1:
        return cfg.lambda_grid[0]
    sub_train, validation = split(train, cfg.train_frac, seed + 1)
    metric = default_metric(train.task)
    best_lam, best_area = cfg.lambda_grid[0], -np.inf
    for lam in cfg.lambda_grid:
        ens, _ = _fit(sub_train, learner, lam, max_rules, cfg)
        area = area_under_size_curve(padded_curve(ens, validation, max_rules, metric))
        if area > best_area:
            best_lam, best_area = lam, area
    return best_lam


def run_cell(name: str, ds: Dataset, learner: str, seed: int, max_rules: int, cfg: EvalConfig) -> List[CurvePoint]:
    """One (dataset, learner, seed) cell: select lambda, fit, score every size"""
    train, test = split(ds, cfg.train_frac, seed)
    lam = select_lambda(train, learner, max_rules, cfg, seed)
    metric = default_metric(ds.task)

    start = time.perf_counter()
    ens, booster = _fit(train, learner, lam, max_rules, cfg)
    total_time = time.perf_counter() - start

    curve = padded_curve(ens, test, max_rules, metric)
    points = []
    elapsed = 0.0
    prune = PruneStats()
    for k, score in curve:
        if k <= len(booster.rounds):
            info = booster.rounds[k - 1]
            elapsed += info.fit_time_s
            prune = prune.add(info.prune)
        else:
            elapsed = total_time
        points.append(CurvePoint(name, learner, lam, seed, k, metric, score, round(elapsed, 6),
                                 prune.nodes_expanded, prune.immediate_bound, prune.immediate_equiv,
                                 prune.propagated_bound, prune.propagated_equiv))
    logger.info(f"{name}/{learner}/seed={seed}: lambda={lam} "
                f"curve area={area_under_size_curve(curve):.4f} ({total_time:.2f}s)")
    return points


def _environment() -> dict:
    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "generator": "numpy.random.Generator(PCG64)",
    }


def run_benchmark(cfg: EvalConfig, datasets: Sequence[BenchTask]) -> Report:
    report = Report(metadata={
        "curve_area": CURVE_AREA_DEFINITION,
        "lambda_selection": LAMBDA_SELECTION,
        "timing": "wall clock, cumulative over boosting rounds up to k",
        "timing_columns": list(TIMING_COLUMNS),
        "config": cfg.model_dump(mode="json"),
        "environment": _environment(),
        "datasets": {},
    })

    cells = []
    for task in datasets:
        try:
            ds = task.load()
        except Exception as e:
            logger.warning(f"Dataset {task.name} failed to load: {e}")
            report.failures.append({"dataset": task.name, "learner": "", "seed": -1, "error": str(e)})
            continue
        report.metadata["datasets"][task.name] = {"rows": ds.n, "features": len(ds.columns),
                                                  "task": ds.task, "fingerprint": dataset_fingerprint(ds)}
        max_rules = task.max_rules or cfg.max_rules
        for learner in cfg.learners:
            for rep in range(cfg.repetitions):
                cells.append((task.name, ds, learner, cfg.seed + rep, max_rules))

    with ThreadPoolExecutor(max_workers=cfg.jobs) as executor:
        futures = {executor.submit(run_cell, *cell, cfg): cell for cell in cells}
        for future in as_completed(futures):
            name, _, learner, seed, _ = futures[future]
            try:
                report.points.extend(future.result())
            except Exception as e:
                logger.warning(f"Cell {name}/{learner}/seed={seed} failed: {e}")
                report.failures.append({"dataset": name, "learner": learner, "seed": seed, "error": str(e)})

    logger.info(f"Benchmark finished: {len(report.points)} curve points, {len(report.failures)} failures")
    return report


@dataclass(frozen=True)
class SweepPoint:
    dataset: str
    lam: float
    seed: int
    rules: int
    fit_time_s: float
    nodes_expanded: int


def run_lambda_sweep(datasets: Sequence[BenchTask], lambdas: Sequence[float], cfg: EvalConfig) -> List[SweepPoint]:
    """Optimal-learner fit time and search effort per lambda on the training part"""
    points = []
    for task in datasets:
        ds = task.load()
        max_rules = task.max_rules or cfg.max_rules
        train, _ = split(ds, cfg.train_frac, cfg.seed)
        for lam in lambdas:
            start = time.perf_counter()
            ens, booster = _fit(train, OPTIMAL, lam, max_rules, cfg)
            elapsed = time.perf_counter() - start
            nodes = sum(info.prune.nodes_expanded for info in booster.rounds)
            points.append(SweepPoint(task.name, lam, cfg.seed, len(ens.rules), round(elapsed, 6), nodes))
            logger.info(f"{task.name}: lambda={lam} {len(ens.rules)} rules in {elapsed:.2f}s, {nodes} nodes")
    return points


def write_sweep(points: Sequence[SweepPoint], path: Union[str, Path]) -> None:
    frame = pd.DataFrame([asdict(p) for p in points]).rename(columns={"lam": "lambda"})
    frame.to_csv(path, index=False, lineterminator="\n")
