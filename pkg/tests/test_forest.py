import itertools
import math
import random

import numpy as np
import pytest

from hybrid_forest.core import Instance, Prediction, RunConfig, Schema
from hybrid_forest.forest import (FeatureBag, HybridForest, ImpactController, PerformanceWindow, RandomForest,
                                  SingleTree, UnreachableTarget, build_model, combine_classification,
                                  combine_regression, confidence, generate_bags, hybrid_step,
                                  min_learners_for_confidence, random_forest_step, weak_learner_feature_count)
from hybrid_forest.hoeffding import make_tree
from hybrid_forest.streams import generate_waveform

# 40-digit evaluations of 1 - ((n-1)/n)^(m sqrt n), frozen
CONF_100_10 = 0.6339676587267704950693839734274826138101
CONF_2_1 = 0.6247857727535182263269415259505775247417
CONF_16_50 = 0.99999752112127616627


def onehot(c, classes=3):
    return Prediction(c, tuple(1.0 if i == c else 0.0 for i in range(classes)))


class TestSizing:
    @pytest.mark.parametrize("f,expected", [(16, 4), (1, 1), (21, 5), (4, 2), (2, 2), (8, 3)])
    def test_feature_count(self, f, expected):
        assert weak_learner_feature_count(f) == expected

    def test_confidence_values(self):
        assert confidence(1, 3) == 1.0
        assert confidence(37, 0) == 0.0
        assert confidence(100, 10) == pytest.approx(CONF_100_10, rel=1e-12)
        assert confidence(2, 1) == pytest.approx(CONF_2_1, rel=1e-12)
        assert confidence(16, 50) == pytest.approx(CONF_16_50, rel=1e-12)

    def test_min_learners(self):
        assert min_learners_for_confidence(2, 0.5) == 1
        assert min_learners_for_confidence(57, 1e-12) == 1
        # linear scan oracle
        m = next(m for m in itertools.count() if 1 - (99 / 100) ** (m * 10) >= 0.99)
        assert min_learners_for_confidence(100, 0.99) == m == 46
        assert min_learners_for_confidence(21, 0.99) == 21
        with pytest.raises(UnreachableTarget):
            min_learners_for_confidence(10, 1.0)

    def test_min_learners_minimal(self):
        for n in range(2, 60):
            for target in (0.3, 0.9, 0.999):
                m = min_learners_for_confidence(n, target)
                assert confidence(n, m) >= target
                assert m == 1 or confidence(n, m - 1) < target

    def test_monotone_grid(self):
        for n in (1, 2, 3, 7, 64, 1000):
            vals = [confidence(n, m) for m in range(0, 200)]
            assert all(0.0 <= v <= 1.0 for v in vals)
            assert all(a <= b for a, b in zip(vals, vals[1:]))
        for m in (1, 5, 50):
            vals = [confidence(n, m) for n in range(2, 300)]
            assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_monte_carlo_with_replacement(self):
        rng = np.random.default_rng(11)
        trials = 20000
        n, m = 100, 10
        # probability that one fixed feature is drawn at least once in m*sqrt(n) draws
        draws = rng.integers(0, n, size=(trials, m * 10))
        p_hat = np.mean((draws == 0).any(axis=1))
        se = math.sqrt(CONF_100_10 * (1 - CONF_100_10) / trials)
        assert abs(p_hat - CONF_100_10) < 3 * se


class TestBags:
    def test_empty(self):
        assert generate_bags(Schema.numeric(5, 2), 0, 1) == []

    def test_shape(self):
        bags = generate_bags(Schema.numeric(4, 2), 30, 7)
        for b in bags:
            assert len(b.features) == 2 == len(set(b.features))
            assert all(0 <= f < 4 for f in b.features)
        assert [b.learner_id for b in bags] == list(range(30))

    def test_deterministic(self):
        assert generate_bags(21, 10, 3) == generate_bags(21, 10, 3)
        assert generate_bags(21, 10, 3) != generate_bags(21, 10, 4)

    def test_coverage_dominates_bound(self):
        # empirical chance some feature is missed stays at or below the analytic complement
        misses = 0
        for seed in range(10000):
            bags = generate_bags(16, 50, seed)
            if len({f for b in bags for f in b.features}) < 16:
                misses += 1
        assert misses / 10000 <= 1 - CONF_16_50

    def test_enforce_coverage(self):
        for seed in range(20):
            bags = generate_bags(21, 10, seed, enforce_coverage=True)
            assert len({f for b in bags for f in b.features}) == 21

    def test_bag_validation(self):
        with pytest.raises(ValueError):
            FeatureBag(0, ())
        with pytest.raises(ValueError):
            FeatureBag(0, (2, 1))


class TestCombine:
    def test_tie_to_main(self):
        out = combine_classification([onehot(1), onehot(1), onehot(0)], onehot(0))
        assert out.value == 0

    def test_majority(self):
        assert combine_classification([onehot(2)] * 3, onehot(0)).value == 2

    def test_exhaustive_small(self):
        for votes in itertools.product(range(3), repeat=4):
            *weak, main = votes
            counts = [votes.count(c) for c in range(3)]
            top = max(counts)
            expected = main if counts[main] == top else counts.index(top)
            out = combine_classification([onehot(w) for w in weak], onehot(main))
            assert out.value == expected
            assert out.votes == tuple(c / 4 for c in counts)

    def test_regression(self):
        assert combine_regression([Prediction(1.0), Prediction(3.0)], Prediction(2.0)).value == 2.0
        assert combine_regression([], Prediction(5.0)).value == 5.0
        rng = random.Random(2)
        vals = [rng.uniform(-5, 5) for _ in range(7)]
        out = combine_regression([Prediction(v) for v in vals[:6]], Prediction(vals[6]))
        assert out.value == pytest.approx(sum(vals) / 7, rel=1e-12)


class TestWindow:
    def test_fifo(self):
        w = PerformanceWindow(3, fill=1)
        assert w.contents() == (1, 1, 1)
        w.push(0)
        w.push(0)
        assert w.contents() == (1, 0, 0) and w.sum == 1
        w.reset(0)
        assert w.sum == 0 and len(w) == 3


def scripted():
    rows = []
    rows += [(0, (1, 1), 2)] * 12
    rows += [(0, (2, 2), 2)] * 8
    rows += [(2, (2, 1), 2)] * 7
    rows += [(2, (1, 0), 1)] * 3
    return rows


class TestGoldenTrace:
    # hand-stepped: k=15, d=0.2 (ensemble iff sum > 3), drift threshold 0.5
    EMITTED = [1] * 12 + [0] * 8 + [2] * 7 + [2] * 3
    USED = [True] * 12 + [False] * 12 + [True] * 6
    SUMS = [14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0, 0, 0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 7, 7, 7]
    FINAL_W = (0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0)

    def test_trace(self):
        ctl = ImpactController(True, 0.2, 15, 0.5)
        assert ctl.window.contents() == (1,) * 15
        emitted, used, sums, events = [], [], [], []
        for t, (main, weak, truth) in enumerate(scripted()):
            r = ctl.step(onehot(main), [onehot(w) for w in weak], truth)
            emitted.append(r.prediction.value)
            used.append(r.used_ensemble)
            sums.append(ctl.window.sum)
            assert len(ctl.window) == len(ctl.disagreement) == 15
            if r.drift:
                events.append((t, r.drift.fraction))
        assert emitted == self.EMITTED
        assert used == self.USED
        assert sums == self.SUMS
        assert ctl.window.contents() == self.FINAL_W
        assert events == [(19, 8 / 15)]
        assert ctl.disagreement.contents() == (0,) * 15

    def test_fresh_forest_uses_vote(self):
        ctl = ImpactController(True, 0.2, 15)
        assert ctl.use_ensemble
        ctl.window.reset(0)
        assert not ctl.use_ensemble

    def test_strict_comparison(self):
        ctl = ImpactController(True, 0.2, 15)
        ctl.window.reset(0)
        for _ in range(3):
            ctl.window.push(1)
        assert ctl.window.sum == 3 and not ctl.use_ensemble
        ctl.window.push(1)
        assert ctl.use_ensemble

    def test_drift_only_strictly_above(self):
        ctl = ImpactController(True, 0.2, 4, drift_threshold=0.5)
        ctl.window.reset(0)
        fired = [ctl.step(onehot(0), [onehot(2), onehot(2)], 2).drift for _ in range(3)]
        # 1/4, 2/4 do not fire; 3/4 does
        assert fired[0] is None and fired[1] is None and fired[2] is not None


def wave(n, seed=0):
    return list(generate_waveform(n, seed))


class TestForests:
    def test_m0_equals_single(self):
        cfg = RunConfig(weak_learner_count=0, grace_period=50)
        schema = Schema.numeric(21, 3)
        forest, tree = HybridForest(schema, cfg), make_tree(schema, cfg)
        for inst in wave(1000):
            p, _, _ = hybrid_step(forest, inst)
            assert p == tree.predict(inst)
            tree.learn(inst)

    def test_m1_rf_equals_tree(self):
        cfg = RunConfig(weak_learner_count=1, grace_period=50)
        schema = Schema.numeric(21, 3)
        rf = RandomForest(schema, cfg)
        bag = rf.bags[0]
        tree = make_tree(schema.project(bag.features), cfg)
        for inst in wave(1000):
            p, _ = random_forest_step(rf, inst)
            assert p == tree.predict(inst.project(bag.features))
            tree.learn(inst.project(bag.features))

    def test_rf_majority(self):
        cfg = RunConfig(weak_learner_count=3)
        rf = RandomForest(Schema.numeric(4, 3), cfg)
        assert rf._combine([onehot(0), onehot(0), onehot(1)]).value == 0
        # three-way tie goes to learner 0
        assert rf._combine([onehot(2), onehot(0), onehot(1)]).value == 2

    def test_emitted_matches_branch(self):
        cfg = RunConfig(weak_learner_count=5, grace_period=50)
        forest = HybridForest(Schema.numeric(21, 3), cfg)
        for inst in wave(1500, 3):
            r = forest.step(inst)
            if r.used_ensemble:
                assert r.prediction == combine_classification(r.weak, r.main)
            else:
                assert r.prediction == r.main

    def test_deterministic(self):
        cfg = RunConfig(weak_learner_count=4, grace_period=50, rng_seed=9)

        def run():
            f = HybridForest(Schema.numeric(21, 3), cfg)
            out = [(f.step(i).prediction, f.window.contents()) for i in wave(800, 4)]
            return out, f.bags

        assert run() == run()

    def test_weak_trees_see_projection(self):
        cfg = RunConfig(weak_learner_count=3)
        f = HybridForest(Schema.numeric(21, 3), cfg)
        for b, t in zip(f.bags, f.weak_trees):
            assert t.schema.n_features == len(b.features) == 5

    def test_regression_forest(self):
        schema = Schema.numeric(3)
        f = HybridForest(schema, RunConfig(weak_learner_count=2, grace_period=20))
        rng = np.random.default_rng(0)
        for _ in range(300):
            x = rng.uniform(size=3)
            r = f.step(Instance(tuple(x), float(5 + 10 * x[0])))
            assert isinstance(r.prediction.value, float)

    def test_memory_ordering(self):
        cfg = RunConfig(weak_learner_count=10, grace_period=50)
        schema = Schema.numeric(21, 3)
        models = {k: build_model(k, schema, cfg) for k in ("single", "rf", "hybrid")}
        for inst in wave(1000, 5):
            for m in models.values():
                m.step(inst)
        mem = {k: m.memory_estimate() for k, m in models.items()}
        assert mem["single"] < mem["rf"] <= mem["hybrid"]

    def test_single_tree_adapter(self):
        st = SingleTree(Schema.numeric(21, 3))
        r = st.step(wave(1)[0])
        assert r.main == r.prediction
