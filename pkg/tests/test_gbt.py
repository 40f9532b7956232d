import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delicate.corpus import Mention
from delicate.gbt import (
    PRESETS,
    DegenerateTrainingError,
    GbtModel,
    Hyperparams,
    Leaf,
    Split,
    even_spread,
    fit,
    gain_importance,
    logistic_loss,
    sample_training_pairs,
    sigmoid,
    tree_depth,
)
from delicate.kb import CandidateTuple, EntityRecord
from oracles import HAND_LR, HAND_X, HAND_Y, hand_newton_oracle, separable_1d


def hp(**kw):
    base = dict(learning_rate=0.3, max_depth=1, min_samples_leaf=0.01, min_samples_split=0.02,
                n_estimators=25, block_size=10, c_neg_size=5)
    base.update(kw)
    return Hyperparams(**base)


def fit_hand():
    return fit(HAND_X, HAND_Y, hp(learning_rate=HAND_LR, n_estimators=2), feature_names=("x",))


class TestFit:
    def test_hand_newton_leaves(self):
        model = fit_hand()
        base, stages = hand_newton_oracle()
        assert model.base_score == pytest.approx(base, abs=1e-12)
        for tree, (threshold, left, right) in zip(model.trees, stages):
            assert isinstance(tree, Split) and tree.feature == 0
            assert tree.threshold == threshold
            assert tree.left.value == pytest.approx(left, abs=1e-9)
            assert tree.right.value == pytest.approx(right, abs=1e-9)

    def test_separable(self):
        X, y = separable_1d()
        model = fit(X, y, hp(), feature_names=("x",))
        assert len(model.trees) <= 25
        assert np.array_equal(model.predict_proba(X) >= 0.5, y == 1)
        first = model.trees[0]
        assert X[y == 0, 0].max() <= first.threshold < X[y == 1, 0].min()

    @pytest.mark.parametrize("label", [0, 1])
    def test_single_class_rejected(self, label):
        with pytest.raises(DegenerateTrainingError):
            fit(HAND_X, np.full(4, label), hp(), feature_names=("x",))

    def test_depth_limit(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((300, 3))
        y = (X[:, 0] * X[:, 1] > 0).astype(int)
        model = fit(X, y, hp(max_depth=3, n_estimators=10), feature_names=("a", "b", "c"))
        assert max(tree_depth(t) for t in model.trees) <= 3

    def test_loss_nonincreasing(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((400, 4))
        y = (X[:, 0] + 0.5 * X[:, 2] + 0.3 * rng.standard_normal(400) > 0).astype(int)
        model = fit(X, y, hp(max_depth=3, n_estimators=40, learning_rate=0.2), feature_names="abcd")
        losses = [logistic_loss(y, model.decision_function(X, n_trees=k)) for k in range(41)]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_deterministic(self):
        X, y = separable_1d(seed=4)
        a = fit(X, y, hp(), feature_names=("x",), seed=3).dumps()
        b = fit(X, y, hp(), feature_names=("x",), seed=3).dumps()
        assert a == b


class TestPredict:
    def test_zero_trees_balanced_prior(self):
        model = GbtModel([], 0.1, 0.0, feature_names=("x",))
        assert model.predict_proba([1.0]) == 0.5

    def test_probabilities_stay_inside_unit_interval(self):
        model = GbtModel([Leaf(4.0)] * 50, 1.0, 0.0, feature_names=("x",))
        p = model.predict_proba([[0.0]])
        assert 0.0 < p[0] < 1.0

    def test_type_match_does_not_lower_p(self):
        rng = np.random.default_rng(2)
        n = 400
        X = rng.uniform(0, 1, (n, 9))
        X[:, 7] = rng.integers(0, 2, n)
        y = ((X[:, 7] == 1) & (rng.uniform(size=n) < 0.9) | (rng.uniform(size=n) < 0.1)).astype(int)
        model = fit(X, y, hp(max_depth=1, n_estimators=25))
        off, on = X.copy(), X.copy()
        off[:, 7], on[:, 7] = 0, 1
        assert (model.predict_proba(on) >= model.predict_proba(off)).all()

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((200, 9))
        y = (X[:, 0] > 0.2).astype(int)
        model = fit(X, y, hp(max_depth=3, n_estimators=15))
        model.save(tmp_path / "m.json")
        loaded = GbtModel.load(tmp_path / "m.json")
        np.testing.assert_allclose(loaded.predict_proba(X), model.predict_proba(X), rtol=0, atol=1e-12)
        assert loaded.hyperparams == model.hyperparams
        assert loaded.dumps() == model.dumps()

    def test_rejects_other_version(self):
        obj = GbtModel([], 0.1, 0.0, feature_names=("x",)).to_json()
        obj["version"] = 99
        with pytest.raises(ValueError):
            GbtModel.from_json(json.loads(json.dumps(obj)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 3))
    def test_monotone_rescaling_keeps_block_argmax(self, seed, column):
        rng = np.random.default_rng(seed)
        X = rng.integers(0, 6, (120, 4)).astype(float)
        y = (X[:, 0] + X[:, 1] + rng.integers(0, 3, 120) > 6).astype(int)
        if y.min() == y.max():
            return
        Xt = X.copy()
        Xt[:, column] = Xt[:, column] ** 3 + 2.0 * Xt[:, column] - 5.0
        params = hp(max_depth=2, n_estimators=15)
        a = fit(X, y, params, feature_names="abcd").predict_proba(X)
        b = fit(Xt, y, params, feature_names="abcd").predict_proba(Xt)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
        for block in np.split(np.arange(120), 12):
            assert np.argmax(a[block]) == np.argmax(b[block])

    @settings(max_examples=50)
    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=30))
    def test_sigmoid_is_monotone(self, margins):
        assert (np.diff(sigmoid(np.sort(np.array(margins)))) >= 0).all()


class TestImportance:
    def test_unused_feature_zero(self):
        X, y = separable_1d()
        X = np.hstack([X, np.zeros_like(X)])
        imp = gain_importance(fit(X, y, hp(), feature_names=("x", "dead")))
        assert imp["dead"] == 0.0

    def test_single_split(self):
        model = GbtModel([Split(1, 0.5, 2.0, Leaf(-1.0), Leaf(1.0))], 0.1, 0.0, feature_names=("a", "b"))
        assert gain_importance(model) == {"a": 0.0, "b": 1.0}

    def test_sums_to_one(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((300, 9))
        y = (X[:, 0] + X[:, 3] > 0).astype(int)
        imp = gain_importance(fit(X, y, hp(max_depth=3, n_estimators=20)))
        assert sum(imp.values()) == pytest.approx(1.0, abs=1e-9)


class TestSampling:
    @pytest.mark.parametrize("n,c,want", [
        (4, 2, [0, 3]), (4, 1, [2]), (5, 3, [0, 2, 4]), (3, 8, [0, 1, 2]), (0, 3, []), (10, 4, [0, 3, 6, 9]),
    ])
    def test_even_spread(self, n, c, want):
        assert even_spread(n, c) == want

    @staticmethod
    def block(gold_rank, n=5):
        m = Mention("d", 0, 4, "Roma", "LOC", 1900, gold="Q1" if gold_rank is not None else "NIL")
        cands = []
        for i in range(n):
            eid = 1 if i == gold_rank else 100 + i
            cands.append(CandidateTuple(EntityRecord(eid, "x", f"Q{eid}", "x", "LOC", None), float(i)))
        return m, cands, m.gold

    def test_positions_zero_and_three(self):
        rows = sample_training_pairs([self.block(0)], c_neg_size=2)
        assert [(r.entity_id, r.label) for r in rows] == [(1, 1), (101, 0), (104, 0)]

    def test_no_gold(self):
        rows = sample_training_pairs([self.block(None)], c_neg_size=3)
        assert [r.label for r in rows] == [0, 0, 0]

    def test_all_negatives_when_c_large(self):
        rows = sample_training_pairs([self.block(2)], c_neg_size=10)
        assert sorted(r.entity_id for r in rows if r.label == 0) == [100, 101, 103, 104]

    def test_seed_only_breaks_ties(self):
        m, cands, gold = self.block(0)
        cands = [CandidateTuple(c.entity, 1.0 if i else 0.0) for i, c in enumerate(cands)]
        picks = {tuple(r.entity_id for r in sample_training_pairs([(m, cands, gold)], 2, seed=s)) for s in range(20)}
        assert len(picks) > 1
        m, cands, gold = self.block(0)
        picks = {tuple(r.entity_id for r in sample_training_pairs([(m, cands, gold)], 2, seed=s)) for s in range(20)}
        assert len(picks) == 1


class TestHyperparams:
    def test_presets(self):
        assert PRESETS["dz"] == Hyperparams(0.115, 11, 0.0155, 0.015, 350, 50, 10)
        assert PRESETS["amd"] == Hyperparams(0.185, 14, 0.08, 0.02, 300, 20, 6)
        assert PRESETS["all"] == Hyperparams(0.135, 8, 0.01, 0.037, 500, 50, 8)

    @pytest.mark.parametrize("kw", [{"learning_rate": 0}, {"min_samples_leaf": 1.5}, {"max_depth": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            hp(**kw)
