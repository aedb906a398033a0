"""
Tight optimistic estimator for the boosting objective.

bnd(I) = max{obj(J) : J subset of I}. Once the rows of I are listed in
descending g/h order, some optimal J is a prefix ending on a row with g > 0 or
a suffix starting on a row with g < 0, so a single pass over running sums from
both ends finds it.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from loss import GradientStats, ObjectiveContext, ObjectiveDomainError


@dataclass(frozen=True)
class BoundResult:
    value: float
    witness: Optional[np.ndarray] = None


def _cut_values(g_sums: np.ndarray, h_sums: np.ndarray, valid: np.ndarray, ctx: ObjectiveContext) -> np.ndarray:
    denominators = ctx.lam + h_sums
    if np.any(valid & (denominators <= 0)):
        raise ObjectiveDomainError("lambda + sum h vanishes on a bound candidate")
    values = np.full(len(g_sums), -np.inf)
    values[valid] = g_sums[valid] ** 2 / (2.0 * ctx.n * denominators[valid])
    return values


def tight_bound(extent_sorted: Sequence[int], stats: GradientStats, ctx: ObjectiveContext,
                with_witness: bool = False) -> BoundResult:
    """
    Upper bound on the objective of every subset of extent_sorted.

    extent_sorted must list row indices in stats.sorted_order order; it is
    never re-sorted here. The empty set (value 0) is always a candidate.
    """
    rows = np.asarray(extent_sorted, dtype=np.int64)
    if len(rows) == 0:
        return BoundResult(0.0, rows if with_witness else None)

    g = stats.g[rows]
    h = stats.h[rows]

    prefix = _cut_values(np.cumsum(g), np.cumsum(h), g > 0, ctx)
    # suffix starting at position k, accumulated from the back
    suffix = _cut_values(np.cumsum(g[::-1])[::-1], np.cumsum(h[::-1])[::-1], g < 0, ctx)

    best_prefix = int(np.argmax(prefix))
    best_suffix = int(np.argmax(suffix))
    value = max(prefix[best_prefix], suffix[best_suffix], 0.0)

    witness = None
    if with_witness:
        if value <= 0.0:
            witness = rows[:0]
        elif prefix[best_prefix] >= suffix[best_suffix]:
            witness = rows[:best_prefix + 1]
        else:
            witness = rows[best_suffix:]
    return BoundResult(float(value), witness)
