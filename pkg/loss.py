"""
Losses, per-round gradient statistics and the second-order boosting objective.

For a rule antecedent with extent I the boosting round maximizes

    obj(I) = (sum_I g)^2 / (2n (lambda + sum_I h))

and the rule weight is w = -sum_I g / (lambda + sum_I h).
"""

import logging
from dataclasses import dataclass
from functools import cmp_to_key
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.special import expit

if TYPE_CHECKING:
    from dataset import Dataset
    from learners import RuleEnsemble

logger = logging.getLogger(__name__)


class ObjectiveDomainError(ArithmeticError):
    """Raised when lambda + sum h vanishes on a non-empty extent"""


class LossFunction:
    name = ""

    def loss(self, y: np.ndarray, f: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, y: np.ndarray, f: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, y: np.ndarray, f: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def validate_target(self, y: np.ndarray) -> None:
        pass


class SquaredLoss(LossFunction):
    name = "squared"

    def loss(self, y, f):
        return (y - f) ** 2

    def gradient(self, y, f):
        return -2.0 * (y - f)

    def hessian(self, y, f):
        return np.full_like(f, 2.0, dtype=np.float64)


class LogisticLoss(LossFunction):
    """log(1 + exp(-y f)) for labels in {-1, +1}"""
    name = "logistic"

    def loss(self, y, f):
        return np.logaddexp(0.0, -y * f)

    def gradient(self, y, f):
        # -y p(-y|x)
        return -y * expit(-y * f)

    def hessian(self, y, f):
        # p(y|x) p(-y|x)
        margin = y * f
        return expit(margin) * expit(-margin)

    def validate_target(self, y):
        if not np.isin(y, (-1.0, 1.0)).all():
            raise ValueError("Logistic loss requires labels in {-1, +1}")


LOSSES = {cls.name: cls for cls in (SquaredLoss, LogisticLoss)}


def get_loss(loss) -> LossFunction:
    if isinstance(loss, LossFunction):
        return loss
    try:
        return LOSSES[loss]()
    except KeyError:
        raise ValueError(f"Unknown loss '{loss}', expected one of {sorted(LOSSES)}") from None


def _ratio_class(g: float, h: float) -> int:
    # rows with vanishing h sit at the +inf / -inf end by sign of g
    if h > 0 or g == 0:
        return 0
    return 1 if g > 0 else -1


def ratio_order(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """
    Permutation of rows by descending g/h using cross-multiplied comparisons.

    Ties keep ascending row index (the sort is stable).
    """
    gl = g.tolist()
    hl = h.tolist()

    def compare(i: int, j: int) -> int:
        ci, cj = _ratio_class(gl[i], hl[i]), _ratio_class(gl[j], hl[j])
        if ci != cj:
            return -1 if ci > cj else 1
        if ci != 0:
            return 0
        hi = hl[i] if hl[i] > 0 else 1.0
        hj = hl[j] if hl[j] > 0 else 1.0
        lhs, rhs = gl[i] * hj, gl[j] * hi
        if lhs > rhs:
            return -1
        if lhs < rhs:
            return 1
        return 0

    return np.array(sorted(range(len(gl)), key=cmp_to_key(compare)), dtype=np.int64)


@dataclass(frozen=True)
class GradientStats:
    g: np.ndarray
    h: np.ndarray
    sorted_order: np.ndarray

    @property
    def n(self) -> int:
        return len(self.g)


@dataclass(frozen=True)
class ObjectiveContext:
    lam: float
    n: int

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")

    @classmethod
    def for_loss(cls, loss, lam: float, n: int, strict: bool = False) -> "ObjectiveContext":
        """With strict=True, refuse lambda=0 for losses whose h can vanish"""
        if strict and get_loss(loss).name == LogisticLoss.name and lam == 0:
            raise ValueError("Logistic loss requires lambda > 0 in strict mode")
        return cls(lam, n)


def gradient_stats(loss, y: np.ndarray, f: np.ndarray) -> GradientStats:
    loss = get_loss(loss)
    y = np.asarray(y, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if y.shape != f.shape:
        raise ValueError(f"Target and prediction lengths differ: {y.shape} vs {f.shape}")
    loss.validate_target(y)
    g = loss.gradient(y, f)
    h = loss.hessian(y, f)
    return GradientStats(g, h, ratio_order(g, h))


def _sums(extent: Sequence[int], stats: GradientStats):
    extent = np.asarray(extent, dtype=np.int64)
    return float(stats.g[extent].sum()), float(stats.h[extent].sum()), len(extent)


def quotient(g_sum: float, h_sum: float, ctx: ObjectiveContext) -> float:
    """Objective value from precomputed sums"""
    denominator = ctx.lam + h_sum
    if denominator <= 0:
        raise ObjectiveDomainError(f"lambda + sum h = {denominator} on a non-empty extent")
    return g_sum * g_sum / (2.0 * ctx.n * denominator)


def objective(extent: Sequence[int], stats: GradientStats, ctx: ObjectiveContext) -> float:
    g_sum, h_sum, size = _sums(extent, stats)
    if size == 0:
        return 0.0
    return quotient(g_sum, h_sum, ctx)


def optimal_weight(extent: Sequence[int], stats: GradientStats, ctx: ObjectiveContext) -> float:
    g_sum, h_sum, size = _sums(extent, stats)
    if size == 0:
        return 0.0
    denominator = ctx.lam + h_sum
    if denominator <= 0:
        raise ObjectiveDomainError(f"lambda + sum h = {denominator} on a non-empty extent")
    if g_sum == 0:
        return 0.0
    return -g_sum / denominator


def regularized_risk(ensemble: "RuleEnsemble", ds: "Dataset", loss, lam: float) -> float:
    """Mean loss plus (lambda / 2n) * sum of squared rule weights"""
    loss = get_loss(loss)
    scores = ensemble.predict(ds)
    weights = np.array([rule.weight for rule in ensemble.rules], dtype=np.float64)
    penalty = lam / (2.0 * ds.n) * float(np.sum(weights ** 2))
    return float(np.mean(loss.loss(ds.target, scores))) + penalty
