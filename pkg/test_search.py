import itertools

import numpy as np
import pytest

import search
from conftest import props_from_masks
from dataset import build_propositions
from loss import ObjectiveContext, gradient_stats
from search import (BranchAndBound, Query, SearchConfig, SearchError, critical_index, find_best_query, implies,
                    shortest_equivalent, top_query)
from synthgen import ParityConfig, gen_noisy_parity


def random_instance(rng):
    n = int(rng.integers(8, 65))
    m = int(rng.integers(2, 13))
    masks = rng.random((m, n)) < rng.uniform(0.3, 0.8)
    props = props_from_masks(masks)
    if rng.random() < 0.5:
        stats = gradient_stats("squared", rng.normal(size=n), rng.normal(scale=0.5, size=n))
        ctx = ObjectiveContext(float(rng.choice([0.0, 0.5])), n)
    else:
        stats = gradient_stats("logistic", rng.choice([-1.0, 1.0], size=n), rng.normal(size=n))
        ctx = ObjectiveContext(float(rng.choice([0.1, 1.0])), n)
    return props, stats, ctx


def conjunction_extents(props):
    """Coverage of every conjunction over props, one boolean row per subset"""
    m = len(props)
    subsets = np.array(list(itertools.product([0, 1], repeat=m)), dtype=np.int64)
    violations = subsets @ (~props.masks).astype(np.int64)
    return subsets, violations == 0


def exhaustive_optimum(props, stats, ctx):
    _, covered = conjunction_extents(props)
    covered = covered.astype(np.float64)
    g_sums = covered @ stats.g
    h_sums = covered @ stats.h
    sizes = covered.sum(axis=1)
    values = np.zeros(len(sizes))
    nonempty = sizes > 0
    values[nonempty] = g_sums[nonempty] ** 2 / (2.0 * ctx.n * (ctx.lam + h_sums[nonempty]))
    return float(values.max())


def critical_toy(make_props_from_extents):
    # rows 1..4 of a 5-row table; p0 is a placeholder so indices match p1, p2, p3
    return make_props_from_extents([[0, 1, 2, 3, 4], [1, 2], [1, 2, 3], [1, 2, 4]], 5)


def test_implies():
    assert implies([1, 2], [1, 2, 3])
    assert not implies([1, 4], [1, 2, 3])
    assert implies([], [5])
    assert implies([], [])


def test_critical_index_non_core(make_props_from_extents):
    props = critical_toy(make_props_from_extents)
    parent = Query((2,), props[2].extent)
    child = np.intersect1d(parent.extent, props[3].extent)
    assert child.tolist() == [1, 2]
    assert critical_index(parent, child, 3, props) == 1


def test_critical_index_duplicates_and_first(make_props_from_extents):
    props = make_props_from_extents([[0, 1], [0, 1], [2]], 3)
    root = top_query(3)
    assert critical_index(root, props[1].extent, 1, props) == 0
    assert critical_index(root, props[0].extent, 0, props) == 0


def test_find_best_query_example(toy_round, make_props_from_extents):
    _, stats, ctx = toy_round
    props = make_props_from_extents([[0, 1], [0], [0, 1, 2]], 4)
    result = find_best_query(props, stats, ctx)
    assert result.query.extent.tolist() == [0, 1]
    assert result.objective == pytest.approx(0.5)
    assert result.guarantee == 1.0

    relaxed = find_best_query(props, stats, ctx, SearchConfig(alpha=0.8))
    assert relaxed.objective >= 0.8 * 0.5


def test_zero_gradients_return_top(make_props_from_extents):
    stats = gradient_stats("squared", np.ones(4), np.ones(4))
    props = make_props_from_extents([[0, 1], [2]], 4)
    result = find_best_query(props, stats, ObjectiveContext(1.0, 4))
    assert result.query.prop_indices == ()
    assert result.objective == 0.0


def test_empty_proposition_set(toy_round):
    _, stats, ctx = toy_round
    with pytest.raises(SearchError):
        find_best_query(props_from_masks(np.zeros((0, 4), dtype=bool)), stats, ctx)


def test_search_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(alpha=0.0)
    with pytest.raises(ValueError):
        SearchConfig(alpha=1.5)


def test_shortest_equivalent(make_props_from_extents):
    props = critical_toy(make_props_from_extents)
    q = Query((2, 3), np.array([1, 2]))
    short = shortest_equivalent(q, props)
    assert short.prop_indices == (1,)
    assert short.extent.tolist() == [1, 2]

    assert shortest_equivalent(top_query(5), props).prop_indices == ()
    single = Query((3,), props[3].extent)
    assert len(shortest_equivalent(single, props)) == 1


def test_optimality_against_exhaustive_search(rng):
    for _ in range(50):
        props, stats, ctx = random_instance(rng)
        best = exhaustive_optimum(props, stats, ctx)
        result = find_best_query(props, stats, ctx)
        assert result.objective == pytest.approx(best, rel=1e-9, abs=1e-12)
        assert result.guarantee == 1.0

        # the returned query really has the reported objective
        covered = props.masks[list(result.query.prop_indices)].all(axis=0)
        assert np.flatnonzero(covered).tolist() == result.query.extent.tolist()


def test_alpha_approximation(rng):
    for _ in range(50):
        props, stats, ctx = random_instance(rng)
        best = exhaustive_optimum(props, stats, ctx)
        result = find_best_query(props, stats, ctx, SearchConfig(alpha=0.8))
        assert result.objective >= 0.8 * best - 1e-12
        assert result.guarantee >= 0.8 - 1e-12


def test_core_queries_cover_each_extent_once(rng):
    cfg = SearchConfig(use_bounds=False, collect_core_queries=True)
    for _ in range(20):
        props, stats, ctx = random_instance(rng)
        result = BranchAndBound(props, stats, ctx, cfg).run()
        masks = props.masks
        core_extents = [masks[list(q)].all(axis=0).tobytes() if q else np.ones(props.n, dtype=bool).tobytes()
                        for q in result.core_queries]
        _, covered = conjunction_extents(props)
        distinct = {row.tobytes() for row in covered}
        assert len(core_extents) == len(set(core_extents))
        assert set(core_extents) == distinct


@pytest.mark.parametrize("cfg", [
    SearchConfig(use_bounds=False),
    SearchConfig(propagate_equivalence=False),
    SearchConfig(skip_prefix_checks=False),
    SearchConfig(use_bounds=False, propagate_equivalence=False, skip_prefix_checks=False),
])
def test_pruning_toggles_do_not_change_objective(cfg):
    rng = np.random.Generator(np.random.PCG64(99))
    for _ in range(15):
        props, stats, ctx = random_instance(rng)
        reference = find_best_query(props, stats, ctx)
        toggled = find_best_query(props, stats, ctx, cfg)
        assert toggled.objective == pytest.approx(reference.objective, rel=1e-9, abs=1e-12)


def test_max_depth_limits_query_length(rng):
    props, stats, ctx = random_instance(rng)
    result = find_best_query(props, stats, ctx, SearchConfig(max_depth=1))
    assert len(result.query) <= 1


def parity_round(d, n, max_thresholds):
    ds = gen_noisy_parity(ParityConfig(d=d, n=n, sigma=0.25, seed=3))
    props = build_propositions(ds, max_thresholds)
    stats = gradient_stats("logistic", ds.target, np.zeros(ds.n))
    return props, stats, ObjectiveContext(0.1, ds.n)


@pytest.mark.slow
def test_bounding_prunes_parity_search():
    props, stats, ctx = parity_round(d=4, n=320, max_thresholds=3)
    bounded = find_best_query(props, stats, ctx)
    exhaustive = find_best_query(props, stats, ctx, SearchConfig(use_bounds=False))
    assert bounded.objective == pytest.approx(exhaustive.objective, rel=1e-9)
    assert bounded.stats.nodes_expanded < 0.5 * exhaustive.stats.nodes_expanded
    assert exhaustive.stats.immediate_bound == exhaustive.stats.propagated_bound == 0


def test_every_pruning_rule_fires():
    props, stats, ctx = parity_round(3, 200, 6)
    run = find_best_query(props, stats, ctx).stats
    assert run.immediate_bound > 0
    assert run.immediate_equiv > 0
    assert run.propagated_bound > 0
    assert run.propagated_equiv > 0


def test_bounding_never_expands_more_nodes(rng):
    for _ in range(30):
        props, stats, ctx = random_instance(rng)
        bounded = find_best_query(props, stats, ctx)
        unbounded = find_best_query(props, stats, ctx, SearchConfig(use_bounds=False))
        assert bounded.stats.nodes_expanded <= unbounded.stats.nodes_expanded


@pytest.mark.parametrize("skip_prefix_checks", [True, False])
def test_collected_queries_are_prefix_preserving(rng, skip_prefix_checks):
    cfg = SearchConfig(use_bounds=False, collect_core_queries=True, skip_prefix_checks=skip_prefix_checks)
    for _ in range(20):
        props, stats, ctx = random_instance(rng)
        result = BranchAndBound(props, stats, ctx, cfg).run()
        for q in result.core_queries[1:]:
            parent_covered = props.masks[list(q[:-1])].all(axis=0) if len(q) > 1 else np.ones(props.n, dtype=bool)
            parent = Query(q[:-1], np.flatnonzero(parent_covered))
            child = np.flatnonzero(props.masks[list(q)].all(axis=0))
            assert critical_index(parent, child, q[-1], props) == q[-1]


def test_shortest_equivalent_on_random_queries(rng):
    for _ in range(20):
        props, _, _ = random_instance(rng)
        masks = props.masks
        for size in (2, 3, 4):
            for combo in itertools.combinations(range(len(props)), size):
                extent = np.flatnonzero(masks[list(combo)].all(axis=0))
                short = shortest_equivalent(Query(combo, extent), props)
                assert len(short) <= size
                covered = masks[list(short.prop_indices)].all(axis=0) if len(short) else np.ones(props.n, dtype=bool)
                assert np.flatnonzero(covered).tolist() == extent.tolist()
                assert short.extent.tolist() == extent.tolist()


def expiring_clock(reads):
    """perf_counter that jumps a day ahead after the given number of reads"""
    ticks = itertools.count()
    return lambda: 0.0 if next(ticks) < reads else 86400.0


@pytest.mark.parametrize("reads", [1, 2, 3, 5, 8])
def test_time_budget_keeps_certified_guarantee(monkeypatch, reads):
    rng = np.random.Generator(np.random.PCG64(reads))
    stopped = 0
    for _ in range(30):
        props, stats, ctx = random_instance(rng)
        monkeypatch.setattr(search.time, "perf_counter", expiring_clock(reads))
        result = find_best_query(props, stats, ctx, SearchConfig(time_budget=1.0))
        best = exhaustive_optimum(props, stats, ctx)
        assert 0.0 <= result.guarantee <= 1.0
        assert result.objective >= result.guarantee * best - 1e-12
        if not result.stopped_early:
            assert result.objective == pytest.approx(best, rel=1e-9, abs=1e-12)
        stopped += result.stopped_early
    if reads == 1:
        # the budget is checked before the root is expanded
        assert stopped == 30
