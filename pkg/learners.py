"""
Gradient rule boosting with an optimal or greedy base learner.

The ensemble f(x) = sum_t w_t q_t(x) is grown one rule per round from f_0 = 0.
Each round recomputes gradient statistics at the current scores, fits an
antecedent with the configured base learner and weights it with the optimal
second-order weight.
"""

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Mapping, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from dataset import CLASSIFICATION, REGRESSION, Dataset, Op, PropositionSet
from loss import (LogisticLoss, ObjectiveContext, SquaredLoss, get_loss, gradient_stats, objective,
                  optimal_weight, quotient)
from search import IMPROVEMENT_EPS, PruneStats, Query, SearchConfig, find_best_query

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
GREEDY = "greedy"
LEARNERS = (OPTIMAL, GREEDY)

STOP_TOLERANCE = 1e-12


class SchemaError(ValueError):
    """Raised when prediction inputs do not match the columns a model uses"""


class Condition(BaseModel):
    model_config = ConfigDict(frozen=True)

    feature: str
    op: Literal["<=", ">", "==", "!="]
    value: Union[float, str]

    def holds(self, values: np.ndarray) -> np.ndarray:
        numeric_op = self.op in (Op.LEQ.value, Op.GT.value)
        numeric_values = np.issubdtype(values.dtype, np.number)
        if numeric_op != numeric_values:
            kind = "numeric" if numeric_op else "categorical"
            raise SchemaError(f"Column '{self.feature}' must be {kind} for condition {self.describe()}")
        return Op(self.op).holds(values, self.value)

    def describe(self) -> str:
        value = f"{self.value:g}" if isinstance(self.value, float) else self.value
        return f"{self.feature}{self.op}{value}"


class Rule(BaseModel):
    model_config = ConfigDict(frozen=True)

    weight: float
    conditions: List[Condition] = Field(default_factory=list)

    def covers(self, columns: Mapping[str, np.ndarray], n: int) -> np.ndarray:
        mask = np.ones(n, dtype=bool)
        for cond in self.conditions:
            if cond.feature not in columns:
                raise SchemaError(f"Missing column '{cond.feature}' required by the model")
            mask &= cond.holds(columns[cond.feature])
        return mask

    def describe(self) -> str:
        antecedent = " & ".join(cond.describe() for cond in self.conditions) or "True"
        return f"{self.weight:+.4g} if {antecedent}"


class RuleEnsemble(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    task: Literal["regression", "classification"] = REGRESSION
    lam: float = Field(0.0, ge=0.0, alias="lambda")
    learner: Literal["optimal", "greedy"] = OPTIMAL
    rules: List[Rule] = Field(default_factory=list)

    def prefix(self, k: int) -> "RuleEnsemble":
        return self.model_copy(update={"rules": self.rules[:k]})

    def rule_outputs(self, data: Union[Dataset, Mapping]) -> np.ndarray:
        """Per-rule contributions, shape (len(rules), n)"""
        columns, n = _columns_of(data)
        outputs = np.zeros((len(self.rules), n), dtype=np.float64)
        for t, rule in enumerate(self.rules):
            outputs[t, rule.covers(columns, n)] = rule.weight
        return outputs

    def predict(self, data: Union[Dataset, Mapping]) -> np.ndarray:
        columns, n = _columns_of(data)
        scores = np.zeros(n, dtype=np.float64)
        for rule in self.rules:
            scores[rule.covers(columns, n)] += rule.weight
        return scores

    def predict_proba(self, data: Union[Dataset, Mapping]) -> np.ndarray:
        if self.task != CLASSIFICATION:
            raise ValueError("predict_proba is only defined for classification ensembles")
        return expit(self.predict(data))

    def predict_row(self, row: Mapping[str, Union[float, str]]) -> float:
        return float(self.predict({name: [value] for name, value in row.items()})[0])

    def describe(self) -> str:
        return "\n".join(f"{t + 1}: {rule.describe()}" for t, rule in enumerate(self.rules))

    def to_json(self) -> str:
        return json.dumps(self.model_dump(by_alias=True), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RuleEnsemble":
        return cls.model_validate(json.loads(text))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RuleEnsemble":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _columns_of(data: Union[Dataset, Mapping]):
    if isinstance(data, Dataset):
        return {col.name: col.values for col in data.columns}, data.n
    columns = {name: np.asarray(values) for name, values in data.items()}
    lengths = {len(values) for values in columns.values()}
    if len(lengths) > 1:
        raise SchemaError(f"Columns have differing lengths: {sorted(lengths)}")
    return columns, (lengths.pop() if lengths else 0)


def conditions_of(query: Query, props: PropositionSet) -> List[Condition]:
    return [Condition(feature=props[j].feature_name, op=props[j].op.value, value=props[j].threshold)
            for j in query.prop_indices]


class BoostConfig(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    k: int = Field(10, ge=1)
    lam: float = Field(0.0, ge=0.0, alias="lambda")
    learner: Literal["optimal", "greedy"] = OPTIMAL
    search: SearchConfig = Field(default_factory=SearchConfig)
    seed: int = 0


@dataclass
class RoundInfo:
    objective: float
    weight: float
    guarantee: Optional[float]
    fit_time_s: float
    prune: PruneStats = field(default_factory=PruneStats)
    query: Optional[Query] = None


def fit_greedy_rule(props: PropositionSet, stats, ctx: ObjectiveContext) -> Query:
    """
    Hill-climb from the empty conjunction, adding the single proposition with
    the largest objective until no addition strictly improves it.
    """
    masks = props.masks
    extent = np.arange(props.n, dtype=np.int64)
    chosen: List[int] = []
    current = objective(extent, stats, ctx)

    while True:
        covered = masks[:, extent].astype(np.float64)
        g_sums = covered @ stats.g[extent]
        h_sums = covered @ stats.h[extent]
        sizes = covered.sum(axis=1)
        values = np.zeros(len(props))
        for j in np.flatnonzero(sizes > 0):
            values[j] = quotient(g_sums[j], h_sums[j], ctx)
        values[chosen] = -np.inf

        best = int(np.argmax(values))
        if values[best] <= current + IMPROVEMENT_EPS:
            break
        chosen.append(best)
        extent = extent[masks[best, extent]]
        current = values[best]

    return Query(tuple(sorted(chosen)), extent)


class RuleBooster:
    """Stage-wise fitter; rounds holds one RoundInfo per appended rule"""

    def __init__(self, cfg: BoostConfig):
        self.cfg = cfg
        self.rounds: List[RoundInfo] = []

    def _fit_query(self, props, stats, ctx):
        if self.cfg.learner == OPTIMAL:
            result = find_best_query(props, stats, ctx, self.cfg.search)
            return result.query, result.guarantee, result.stats
        query = fit_greedy_rule(props, stats, ctx)
        return query, None, PruneStats()

    def fit(self, ds: Dataset, props: PropositionSet, loss=None) -> RuleEnsemble:
        if loss is None:
            loss = LogisticLoss() if ds.task == CLASSIFICATION else SquaredLoss()
        loss = get_loss(loss)
        if ds.task == CLASSIFICATION and loss.name != LogisticLoss.name:
            raise ValueError("Classification datasets are boosted with the logistic loss")
        if props.n != ds.n:
            raise ValueError(f"Propositions cover {props.n} rows but the dataset has {ds.n}")

        ctx = ObjectiveContext(self.cfg.lam, ds.n)
        scores = np.zeros(ds.n, dtype=np.float64)
        rules: List[Rule] = []
        self.rounds = []

        for t in range(self.cfg.k):
            start = time.perf_counter()
            stats = gradient_stats(loss, ds.target, scores)
            query, guarantee, prune = self._fit_query(props, stats, ctx)
            value = objective(query.extent, stats, ctx)
            if value <= STOP_TOLERANCE:
                logger.info(f"Round {t + 1}: objective {value:.3g} below tolerance, stopping")
                break

            weight = optimal_weight(query.extent, stats, ctx)
            scores[query.extent] += weight
            rule = Rule(weight=weight, conditions=conditions_of(query, props))
            rules.append(rule)
            elapsed = time.perf_counter() - start
            self.rounds.append(RoundInfo(value, weight, guarantee, elapsed, prune, query))
            certified = "n/a" if guarantee is None else f"{guarantee:.3f}"
            logger.info(f"Round {t + 1}: obj={value:.6g} guarantee={certified} {rule.describe()} ({elapsed:.2f}s)")

        return RuleEnsemble(task=ds.task, lam=self.cfg.lam, learner=self.cfg.learner, rules=rules)


def boost(ds: Dataset, props: PropositionSet, loss=None, cfg: Optional[BoostConfig] = None) -> RuleEnsemble:
    return RuleBooster(cfg or BoostConfig()).fit(ds, props, loss)


def predict(ens: RuleEnsemble, row: Mapping[str, Union[float, str]]) -> float:
    return ens.predict_row(row)


def predict_proba(ens: RuleEnsemble, row: Mapping[str, Union[float, str]]) -> float:
    return float(expit(ens.predict_row(row)))
