import numpy as np
import pytest

from dataset import CLASSIFICATION, NUMERIC, Column, Dataset, build_propositions
from learners import (BoostConfig, Condition, Rule, RuleBooster, RuleEnsemble, SchemaError, boost,
                      fit_greedy_rule, predict, predict_proba)
from loss import ObjectiveContext, gradient_stats, objective, regularized_risk
from search import find_best_query
from synthgen import Friedman1Config, ParityConfig, gen_friedman1, gen_noisy_parity


def toy_dataset():
    x = np.array([0.0, 0.0, 1.0, 1.0])
    return Dataset((Column("x", NUMERIC, x),), np.array([1.0, 1.0, 0.0, 0.0]))


def regression_fixture(seed=0):
    return gen_friedman1(Friedman1Config(n=120, d=5, noise_sd=0.5, seed=seed))


def parity_fixture(seed=0):
    return gen_noisy_parity(ParityConfig(d=2, n=160, sigma=0.3, seed=seed))


def test_single_round_fits_toy_exactly():
    ds = toy_dataset()
    props = build_propositions(ds)
    ens = boost(ds, props, "squared", BoostConfig(k=1, lam=0.0))
    assert len(ens.rules) == 1
    rule = ens.rules[0]
    assert rule.weight == pytest.approx(1.0)
    assert rule.describe() == "+1 if x<=0"
    assert regularized_risk(RuleEnsemble(), ds, "squared", 0.0) == pytest.approx(0.5)
    assert regularized_risk(ens, ds, "squared", 0.0) == pytest.approx(0.0)


def test_k_must_be_positive():
    with pytest.raises(ValueError):
        BoostConfig(k=0)


def test_zero_gradients_give_empty_ensemble():
    x = np.array([0.0, 1.0, 2.0])
    ds = Dataset((Column("x", NUMERIC, x),), np.zeros(3))
    ens = boost(ds, build_propositions(ds), "squared", BoostConfig(k=1))
    assert ens.rules == []


def test_classification_requires_logistic():
    ds = parity_fixture()
    with pytest.raises(ValueError, match="logistic"):
        boost(ds, build_propositions(ds, 4), "squared")


def test_greedy_picks_improving_proposition(toy_round, make_props_from_extents):
    _, stats, ctx = toy_round
    props = make_props_from_extents([[0, 1]], 4)
    assert fit_greedy_rule(props, stats, ctx).prop_indices == (0,)


def test_greedy_zero_gradients_and_duplicates(make_props_from_extents):
    stats = gradient_stats("squared", np.ones(4), np.ones(4))
    props = make_props_from_extents([[0, 1], [2]], 4)
    assert fit_greedy_rule(props, stats, ObjectiveContext(1.0, 4)).prop_indices == ()

    toy_stats = gradient_stats("squared", np.array([1.0, 1.0, 0.0, 0.0]), np.zeros(4))
    duplicated = make_props_from_extents([[2, 3], [0, 1], [0, 1]], 4)
    assert fit_greedy_rule(duplicated, toy_stats, ObjectiveContext(0.0, 4)).prop_indices == (1,)


@pytest.mark.parametrize("lam", [0.0, 0.5, 4.0])
def test_squared_round_identity(lam):
    ds = regression_fixture()
    props = build_propositions(ds, 6)
    booster = RuleBooster(BoostConfig(k=5, lam=lam))
    ens = booster.fit(ds, props, "squared")
    assert len(booster.rounds) == len(ens.rules) == 5
    for t, info in enumerate(booster.rounds):
        before = regularized_risk(ens.prefix(t), ds, "squared", lam)
        after = regularized_risk(ens.prefix(t + 1), ds, "squared", lam)
        assert before - after == pytest.approx(info.objective, rel=1e-9)
        assert info.guarantee == 1.0


def test_logistic_risk_non_increasing():
    ds = parity_fixture(seed=4)
    props = build_propositions(ds, 5)
    lam = 0.5
    ens = boost(ds, props, cfg=BoostConfig(k=4, lam=lam))
    risks = [regularized_risk(ens.prefix(t), ds, "logistic", lam) for t in range(len(ens.rules) + 1)]
    assert all(b <= a + 1e-9 for a, b in zip(risks, risks[1:]))


@pytest.mark.parametrize("loss,make", [("squared", regression_fixture), ("logistic", parity_fixture)])
def test_optimal_round_dominates_greedy(loss, make):
    ds = make(seed=1)
    props = build_propositions(ds, 5)
    ctx = ObjectiveContext(0.2, ds.n)
    scores = np.zeros(ds.n)
    for _ in range(4):
        stats = gradient_stats(loss, ds.target, scores)
        optimal = find_best_query(props, stats, ctx)
        greedy = fit_greedy_rule(props, stats, ctx)
        assert optimal.objective >= objective(greedy.extent, stats, ctx) - 1e-12
        scores[optimal.query.extent] += -stats.g[optimal.query.extent].sum() / (
            ctx.lam + stats.h[optimal.query.extent].sum())


def test_prefix_predictions_are_additive():
    ds = regression_fixture(seed=2)
    ens = boost(ds, build_propositions(ds, 6), cfg=BoostConfig(k=4, lam=1.0))
    outputs = ens.rule_outputs(ds)
    for k in range(1, len(ens.rules) + 1):
        assert np.array_equal(ens.prefix(k).predict(ds), ens.prefix(k - 1).predict(ds) + outputs[k - 1])


def test_greedy_learner_reports_no_guarantee():
    ds = regression_fixture()
    booster = RuleBooster(BoostConfig(k=2, learner="greedy"))
    booster.fit(ds, build_propositions(ds, 6))
    assert all(info.guarantee is None for info in booster.rounds)


def test_predict_row():
    covering = Rule(weight=0.5, conditions=[Condition(feature="x", op="<=", value=1.0)])
    missing = Rule(weight=2.0, conditions=[Condition(feature="c", op="==", value="b")])
    ens = RuleEnsemble(task=CLASSIFICATION, rules=[covering, missing])
    assert predict(ens, {"x": 0.0, "c": "a"}) == pytest.approx(0.5)
    assert predict(RuleEnsemble(), {"x": 0.0}) == 0.0
    assert predict_proba(RuleEnsemble(task=CLASSIFICATION), {"x": 0.0}) == 0.5


def test_schema_mismatch():
    ens = RuleEnsemble(rules=[Rule(weight=1.0, conditions=[Condition(feature="x", op=">", value=0.0)])])
    with pytest.raises(SchemaError, match="'x'"):
        predict(ens, {"z": 1.0})
    with pytest.raises(SchemaError, match="numeric"):
        predict(ens, {"x": "high"})


def test_predict_proba_regression_rejected():
    with pytest.raises(ValueError):
        RuleEnsemble().predict_proba({"x": [1.0]})


def test_json_round_trip(tmp_path):
    ds = parity_fixture(seed=3)
    ens = boost(ds, build_propositions(ds, 5), cfg=BoostConfig(k=3, lam=0.1))
    path = tmp_path / "model.json"
    ens.save(path)
    loaded = RuleEnsemble.load(path)
    assert loaded == ens
    assert [r.weight for r in loaded.rules] == [r.weight for r in ens.rules]
    assert np.array_equal(loaded.predict(ds), ens.predict(ds))
    assert '"lambda": 0.1' in path.read_text()


def test_categorical_rules_round_trip():
    cats = np.array(["a", "a", "b", "c"])
    ds = Dataset((Column("c", "categorical", cats),), np.array([2.0, 2.0, -1.0, 0.0]))
    ens = boost(ds, build_propositions(ds), "squared", BoostConfig(k=2))
    restored = RuleEnsemble.from_json(ens.to_json())
    assert np.allclose(restored.predict(ds), ens.predict(ds))
    assert all(isinstance(c.value, str) for r in restored.rules for c in r.conditions)
