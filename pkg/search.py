"""
Optimal base learner: best-first branch-and-bound over core queries.

Every query in the boundary keeps a list of augmentation entries (a, b, c):
a proposition index, a bound on everything reachable through it and the
critical index recorded when it was last checked. An entry is dropped for
all descendants when its bound cannot beat the incumbent, when it is implied
by the current query, or when the critical index proves that every refinement
through it is a non-core query. Each equivalence class of extents is visited
through exactly one core query.
"""

import heapq
import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from bound import tight_bound
from dataset import PropositionSet
from loss import GradientStats, ObjectiveContext, quotient

logger = logging.getLogger(__name__)

IMPROVEMENT_EPS = 1e-12


class SearchError(ValueError):
    pass


class SearchConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(1.0, gt=0.0, le=1.0)
    time_budget: Optional[float] = Field(None, gt=0.0)
    max_depth: Optional[int] = Field(None, ge=1)
    use_bounds: bool = True
    propagate_equivalence: bool = True
    skip_prefix_checks: bool = True
    collect_core_queries: bool = False


@dataclass(frozen=True)
class Query:
    prop_indices: Tuple[int, ...]
    extent: np.ndarray = field(repr=False, compare=False)

    @property
    def tail(self) -> int:
        return self.prop_indices[-1] if self.prop_indices else -1

    def __len__(self) -> int:
        return len(self.prop_indices)


def top_query(n: int) -> Query:
    return Query((), np.arange(n, dtype=np.int64))


@dataclass(frozen=True)
class AugEntry:
    a: int
    b: float
    c: int


@dataclass
class SearchNode:
    query: Query
    aug_list: List[AugEntry]
    priority: float


@dataclass
class PruneStats:
    immediate_bound: int = 0
    immediate_equiv: int = 0
    propagated_bound: int = 0
    propagated_equiv: int = 0
    nodes_expanded: int = 0
    queries_evaluated: int = 0

    def add(self, other: "PruneStats") -> "PruneStats":
        return PruneStats(**{key: getattr(self, key) + getattr(other, key) for key in vars(self)})

    def as_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class SearchResult:
    query: Query
    objective: float
    guarantee: float
    stats: PruneStats
    elapsed_s: float = 0.0
    stopped_early: bool = False
    core_queries: List[Tuple[int, ...]] = field(default_factory=list)


def implies(q_extent: Sequence[int], p_extent: Sequence[int]) -> bool:
    """True iff q_extent is contained in p_extent (both sorted)"""
    q = np.asarray(q_extent, dtype=np.int64)
    p = np.asarray(p_extent, dtype=np.int64)
    if len(q) == 0:
        return True
    if len(q) > len(p):
        return False
    pos = np.searchsorted(p, q)
    if pos[-1] >= len(p):
        return False
    return bool(np.all(p[pos] == q))


def critical_index(parent: Query, child_extent: Sequence[int], a: int, props: PropositionSet) -> int:
    """
    Smallest j with child => p_j but not parent => p_j.

    Equals a exactly when the tail augmentation by a is prefix preserving,
    i.e. when it yields a core query.
    """
    for j in range(a):
        extent = props[j].extent
        if implies(child_extent, extent) and not implies(parent.extent, extent):
            return j
    return a


class _RankedSpace:
    """
    Proposition coverage re-indexed into the round's ratio order.

    Extents are kept as sorted arrays of ranks, so filtering a parent extent by
    a coverage mask yields the child already in the order the bound consumes.
    """

    def __init__(self, props: PropositionSet, stats: GradientStats):
        self.order = stats.sorted_order
        self.masks = props.masks[:, self.order]
        self.g = stats.g[self.order]
        self.h = stats.h[self.order]

    def to_rows(self, ranked: np.ndarray) -> np.ndarray:
        return self.order[ranked]

    def restrict(self, ranked: np.ndarray) -> np.ndarray:
        """Coverage of every proposition within the extent, one row per proposition"""
        return self.masks[:, ranked]


class BranchAndBound:
    """One search instance; single-threaded and deterministic"""

    def __init__(self, props: PropositionSet, stats: GradientStats, ctx: ObjectiveContext, cfg: SearchConfig):
        if len(props) == 0:
            raise SearchError("Cannot search an empty proposition set")
        if stats.n != ctx.n or props.n != ctx.n:
            raise SearchError(f"Row counts disagree: props {props.n}, stats {stats.n}, context {ctx.n}")
        self.props = props
        self.stats = stats
        self.ctx = ctx
        self.cfg = cfg
        self.space = _RankedSpace(props, stats)
        self.prune = PruneStats()
        self.core_queries: List[Tuple[int, ...]] = []
        self._tie = itertools.count()
        # largest bound thrown away by the alpha-relaxed test, for certification
        self._discarded_bound = 0.0

    def _objective(self, ranked: np.ndarray) -> float:
        if len(ranked) == 0:
            return 0.0
        return quotient(float(self.space.g[ranked].sum()), float(self.space.h[ranked].sum()), self.ctx)

    def _bound(self, ranked: np.ndarray) -> float:
        return tight_bound(self.space.to_rows(ranked), self.stats, self.ctx).value

    def _cannot_improve(self, bound: float) -> bool:
        if not self.cfg.use_bounds:
            return False
        if self.cfg.alpha * bound <= self.best_obj:
            if bound > self.best_obj:
                self._discarded_bound = max(self._discarded_bound, bound)
            return True
        return False

    def _critical_indices(self, local: np.ndarray, implied_parent: np.ndarray,
                          candidates: List[int]) -> Dict[int, int]:
        """
        Critical index of every tail augmentation in candidates from a single
        matrix product: p_j holds on the child of a iff no row of the child
        falls outside p_j.
        """
        if not candidates:
            return {}
        open_props = np.flatnonzero(~implied_parent[:max(candidates)])
        if len(open_props) == 0:
            return {a: a for a in candidates}
        outside = (~local[open_props]).astype(np.float64) @ local[candidates].T.astype(np.float64)
        crt = {}
        for col, a in enumerate(candidates):
            hits = np.flatnonzero((outside[:, col] == 0) & (open_props < a))
            crt[a] = int(open_props[hits[0]]) if len(hits) else a
        return crt

    def _push(self, node: SearchNode) -> None:
        heapq.heappush(self.boundary, (-node.priority, next(self._tie), node))

    def _expand(self, node: SearchNode) -> None:
        # node extents live in rank space for the whole search
        query = node.query
        ranked = query.extent
        local = self.space.restrict(ranked)
        implied_parent = local.all(axis=1)
        depth_ok = self.cfg.max_depth is None or len(query) + 1 < self.cfg.max_depth
        crt_of = self._critical_indices(local, implied_parent, [
            e.a for e in node.aug_list
            if not (self.cfg.use_bounds and self.cfg.alpha * e.b <= self.best_obj)
            and not (self.cfg.propagate_equivalence and query.tail > e.c)
            and not implied_parent[e.a]
            and not (self.cfg.skip_prefix_checks and e.c < e.a and not implied_parent[e.c])])

        kept: List[AugEntry] = []
        core_children: List[Tuple[AugEntry, np.ndarray]] = []
        for entry in node.aug_list:
            if self._cannot_improve(entry.b):
                self.prune.propagated_bound += 1
                continue
            if self.cfg.propagate_equivalence and query.tail > entry.c:
                self.prune.propagated_equiv += 1
                continue
            a = entry.a
            if implied_parent[a]:
                self.prune.immediate_equiv += 1
                continue

            child = ranked[local[a]]
            self.prune.queries_evaluated += 1

            if self.cfg.skip_prefix_checks and entry.c < a and not implied_parent[entry.c]:
                # p_c is still implied by the child but not by this query
                crt = entry.c
            else:
                crt = crt_of[a]
            is_core = crt == a

            if is_core:
                value = self._objective(child)
                if self.cfg.collect_core_queries:
                    self.core_queries.append(query.prop_indices + (a,))
                if value > self.best_obj + IMPROVEMENT_EPS:
                    self.best_obj = value
                    self.best = Query(query.prop_indices + (a,), child)
            else:
                self.prune.immediate_equiv += 1

            bound = self._bound(child)
            if self._cannot_improve(bound):
                self.prune.immediate_bound += 1
                continue

            new_entry = AugEntry(a, bound, crt)
            kept.append(new_entry)
            if is_core:
                core_children.append((new_entry, child))

        if not depth_ok:
            return
        for entry, child in core_children:
            if self._cannot_improve(entry.b):
                continue
            aug = [e for e in kept if e.a > entry.a]
            self._push(SearchNode(Query(query.prop_indices + (entry.a,), child), aug, entry.b))

    def run(self) -> SearchResult:
        start = time.perf_counter()
        root_ranked = np.arange(self.ctx.n, dtype=np.int64)
        self.best = Query((), root_ranked)
        self.best_obj = self._objective(root_ranked)
        if self.cfg.collect_core_queries:
            self.core_queries.append(())

        self.boundary: list = []
        root_entries = [AugEntry(a, np.inf, a) for a in range(len(self.props))]
        self._push(SearchNode(self.best, root_entries, self._bound(root_ranked)))

        stopped_early = False
        while self.boundary:
            if self.cfg.time_budget is not None and time.perf_counter() - start > self.cfg.time_budget:
                stopped_early = True
                logger.warning(f"Search time budget of {self.cfg.time_budget}s expired after "
                               f"{self.prune.nodes_expanded} nodes")
                break
            top_bound = -self.boundary[0][0]
            if self.cfg.use_bounds and self.cfg.alpha * top_bound <= self.best_obj:
                stopped_early = top_bound > self.best_obj
                break
            _, _, node = heapq.heappop(self.boundary)
            self.prune.nodes_expanded += 1
            self._expand(node)
            if self.prune.nodes_expanded % 10000 == 0:
                logger.debug(f"{self.prune.nodes_expanded} nodes expanded, boundary {len(self.boundary)}, "
                             f"best {self.best_obj:.6g}")

        remaining = max([-item[0] for item in self.boundary] + [self._discarded_bound])
        if remaining <= self.best_obj:
            guarantee = 1.0
        else:
            guarantee = min(1.0, self.best_obj / remaining)

        best = Query(self.best.prop_indices, np.sort(self.space.to_rows(self.best.extent)))
        shortest = shortest_equivalent(best, self.props)
        elapsed = time.perf_counter() - start
        logger.debug(f"Search finished: obj={self.best_obj:.6g} guarantee={guarantee:.3f} "
                     f"nodes={self.prune.nodes_expanded} in {elapsed:.3f}s")
        return SearchResult(shortest, self.best_obj, guarantee, self.prune, elapsed, stopped_early,
                            list(self.core_queries))


def find_best_query(props: PropositionSet, stats: GradientStats, ctx: ObjectiveContext,
                    cfg: Optional[SearchConfig] = None) -> SearchResult:
    return BranchAndBound(props, stats, ctx, cfg or SearchConfig()).run()


def shortest_equivalent(q: Query, props: PropositionSet) -> Query:
    """
    Greedy shortening: among propositions implied by q, repeatedly add the one
    excluding the most rows not yet excluded, until the extent matches q.
    """
    if len(q) <= 1:
        return q
    target = np.asarray(q.extent, dtype=np.int64)
    masks = props.masks
    candidates = np.flatnonzero(masks[:, target].all(axis=1))

    covered = np.ones(props.n, dtype=bool)
    chosen: List[int] = []
    while covered.sum() > len(target) and len(chosen) < len(q):
        excluded = (covered & ~masks[candidates]).sum(axis=1)
        best = int(np.argmax(excluded))
        if excluded[best] == 0:
            return q
        chosen.append(int(candidates[best]))
        covered &= masks[candidates[best]]

    if covered.sum() != len(target):
        return q
    chosen.sort()
    return Query(tuple(chosen), np.flatnonzero(covered).astype(np.int64))
