"""Weak-learner ensembles: the plain random forest and the hybrid forest.

A hybrid forest pairs one full-feature Hoeffding tree with ``m`` weak trees,
each restricted to a random bag of ``ceil(sqrt(f_total))`` features. An
impact controller keeps a FIFO window of the last ``k`` correctness bits of
the emitted output (all ones at start) and uses the ensemble vote only while
the window sum exceeds ``d * k``; otherwise the main tree answers alone.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core import Instance, Prediction, RunConfig, Schema, is_correct, validate_instance
from .hoeffding import make_tree


class UnreachableTarget(ValueError):
    pass


def weak_learner_feature_count(f_total: int) -> int:
    """Features per weak learner: ceil(sqrt(f_total)), capped at f_total."""
    if f_total < 1:
        raise ValueError(f"f_total must be >= 1, got {f_total}")
    r = math.isqrt(f_total)
    return min(f_total, r if r * r == f_total else r + 1)


def confidence(n: int, m: int) -> float:
    """Probability that every one of ``n`` features shows up in at least one
    of ``m`` learners, each drawing ``sqrt(n)`` features with replacement.

    Evaluates ``1 - ((n - 1) / n) ** (m * sqrt(n))`` with a real-valued root.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    if m == 0:
        return 0.0
    if n == 1:
        return 1.0
    return -math.expm1(m * math.sqrt(n) * math.log1p(-1.0 / n))


def min_learners_for_confidence(n: int, target: float) -> int:
    """Smallest ``m`` with ``confidence(n, m) >= target``."""
    if not target < 1.0:
        raise UnreachableTarget(f"confidence {target} is never reached with finitely many learners")
    if target <= 0.0:
        return 0
    if n == 1:
        return 1
    guess = math.log1p(-target) / (math.sqrt(n) * math.log1p(-1.0 / n))
    m = max(1, math.ceil(guess) - 1)
    while m > 1 and confidence(n, m - 1) >= target:
        m -= 1
    while confidence(n, m) < target:
        m += 1
    return m


def resolve_learner_count(f_total: int, config: RunConfig) -> int:
    if config.weak_learner_count is not None:
        return config.weak_learner_count
    return min_learners_for_confidence(f_total, config.coverage_target)


@dataclass(frozen=True)
class FeatureBag:
    learner_id: int
    features: tuple

    def __post_init__(self):
        feats = tuple(int(i) for i in self.features)
        if not feats:
            raise ValueError("a feature bag cannot be empty")
        if any(b <= a for a, b in zip(feats, feats[1:])):
            raise ValueError("bag indices must be strictly increasing")
        object.__setattr__(self, "features", feats)


def generate_bags(schema, m: int, rng_seed: int = 0, enforce_coverage: bool = False) -> List[FeatureBag]:
    """Draw ``m`` feature bags, distinct features within a bag.

    ``schema`` may be a Schema or the feature count. With
    ``enforce_coverage`` the whole draw is repeated until every feature sits in
    some bag (only attempted when that is possible at all).
    """
    f_total = schema if isinstance(schema, int) else schema.n_features
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    size = weak_learner_feature_count(f_total)
    rng = np.random.default_rng(rng_seed)

    def draw():
        return [FeatureBag(i, tuple(sorted(rng.choice(f_total, size=size, replace=False).tolist())))
                for i in range(m)]

    bags = draw()
    if enforce_coverage and m * size >= f_total:
        while len({f for b in bags for f in b.features}) < f_total:
            bags = draw()
    return bags


def _plurality(outputs: Sequence[Prediction], class_count: int, preferred: int) -> Prediction:
    counts = [0] * class_count
    for p in outputs:
        counts[p.value] += 1
    top = max(counts)
    winner = preferred if counts[preferred] == top else counts.index(top)
    total = len(outputs)
    return Prediction(winner, tuple(c / total for c in counts))


def combine_classification(weak_outputs: Sequence[Prediction], main_output: Prediction) -> Prediction:
    """One vote per learner; ties go to the main tree's class."""
    if not weak_outputs:
        return main_output
    return _plurality([*weak_outputs, main_output], len(main_output.votes), main_output.value)


def combine_regression(weak_outputs: Sequence[Prediction], main_output: Prediction) -> Prediction:
    """Arithmetic mean of all outputs, main tree included."""
    if not weak_outputs:
        return main_output
    values = [p.value for p in weak_outputs]
    values.append(main_output.value)
    return Prediction(math.fsum(values) / len(values))


class PerformanceWindow:
    """Fixed-length FIFO of binary records with a running sum."""

    def __init__(self, size: int, fill: int = 1):
        if size < 1:
            raise ValueError("window size must be >= 1")
        self.size = size
        self._buf = deque([fill] * size, maxlen=size)
        self.sum = fill * size

    def push(self, bit: int) -> int:
        bit = 1 if bit else 0
        oldest = self._buf[0]
        self._buf.append(bit)
        self.sum += bit - oldest
        return oldest

    def reset(self, fill: int = 0) -> None:
        self._buf = deque([fill] * self.size, maxlen=self.size)
        self.sum = fill * self.size

    @property
    def fraction(self) -> float:
        return self.sum / self.size

    def contents(self) -> tuple:
        return tuple(self._buf)

    def __len__(self):
        return len(self._buf)


@dataclass(frozen=True)
class DriftEvent:
    index: int
    fraction: float


@dataclass
class StepResult:
    prediction: Prediction
    drift: Optional[DriftEvent] = None
    used_ensemble: bool = False
    main: Optional[Prediction] = None
    ensemble: Optional[Prediction] = None
    weak: Sequence[Prediction] = field(default_factory=tuple)


class ImpactController:
    """Chooses between the main tree and the ensemble; flags drift.

    ``window`` holds the correctness of emitted predictions. ``disagreement``
    records samples where the ensemble would have been right while the main
    tree was wrong; when its fraction exceeds ``drift_threshold`` a
    DriftEvent fires and the window is cleared.
    """

    def __init__(self, classification: bool, d_hybrid_impact: float = 0.2, k_window_size: int = 15,
                 drift_threshold: float = 0.5, tolerance: float = 0.10):
        self.classification = classification
        self.d = d_hybrid_impact
        self.k = k_window_size
        self.drift_threshold = drift_threshold
        self.tolerance = tolerance
        self.window = PerformanceWindow(k_window_size, fill=1)
        self.disagreement = PerformanceWindow(k_window_size, fill=0)
        self.index = 0

    @classmethod
    def from_config(cls, classification: bool, config: RunConfig) -> "ImpactController":
        return cls(classification, config.d_hybrid_impact, config.k_window_size, config.drift_threshold,
                   config.regression_correctness_tolerance)

    @property
    def use_ensemble(self) -> bool:
        return self.window.sum > self.d * self.k

    def combine(self, weak_outputs, main_output) -> Prediction:
        if self.classification:
            return combine_classification(weak_outputs, main_output)
        return combine_regression(weak_outputs, main_output)

    def correct(self, prediction: Prediction, truth) -> bool:
        if self.classification:
            return prediction.value == truth
        return is_correct(prediction, truth, self.tolerance)

    def step(self, main_output: Prediction, weak_outputs: Sequence[Prediction], truth) -> StepResult:
        ensemble = self.combine(weak_outputs, main_output)
        used = self.use_ensemble
        emitted = ensemble if used else main_output
        self.window.push(self.correct(emitted, truth))
        flag = self.correct(ensemble, truth) and not self.correct(main_output, truth)
        self.disagreement.push(flag)
        event = None
        if self.disagreement.fraction > self.drift_threshold:
            event = DriftEvent(self.index, self.disagreement.fraction)
            self.disagreement.reset(0)
        self.index += 1
        return StepResult(emitted, event, used, main_output, ensemble, tuple(weak_outputs))


class _Bagged:
    def _init_weak(self, schema: Schema, config: RunConfig, bags):
        if bags is None:
            bags = generate_bags(schema, resolve_learner_count(schema.n_features, config), config.rng_seed,
                                 config.enforce_coverage)
        self.bags = list(bags)
        self.weak_trees = [make_tree(schema.project(b.features), config) for b in self.bags]

    def weak_predictions(self, inst: Instance) -> List[Prediction]:
        return [t.predict(inst.project(b.features)) for b, t in zip(self.bags, self.weak_trees)]

    def _learn_weak(self, inst: Instance) -> None:
        for b, t in zip(self.bags, self.weak_trees):
            t.learn(inst.project(b.features))


class HybridForest(_Bagged):
    """One full tree, ``m`` weak trees and an impact controller."""

    def __init__(self, schema: Schema, config: Optional[RunConfig] = None, bags=None, validate: bool = True):
        self.schema = schema
        self.config = config or RunConfig()
        self.validate = validate
        self.main = make_tree(schema, self.config)
        self._init_weak(schema, self.config, bags)
        self.controller = ImpactController.from_config(schema.is_classification, self.config)

    @property
    def window(self) -> PerformanceWindow:
        return self.controller.window

    def step(self, inst: Instance) -> StepResult:
        """Predict, score, update both windows, then train every tree."""
        if self.validate:
            validate_instance(self.schema, inst)
        result = self.controller.step(self.main.predict(inst), self.weak_predictions(inst), inst.target)
        self.learn(inst)
        return result

    def predict(self, inst: Instance) -> Prediction:
        main = self.main.predict(inst)
        if not self.controller.use_ensemble:
            return main
        return self.controller.combine(self.weak_predictions(inst), main)

    def learn(self, inst: Instance) -> None:
        self.main.learn(inst)
        self._learn_weak(inst)

    def memory_estimate(self) -> int:
        return self.main.memory_estimate() + sum(t.memory_estimate() for t in self.weak_trees)


class RandomForest(_Bagged):
    """Plurality vote (or mean) over weak trees only; no window."""

    def __init__(self, schema: Schema, config: Optional[RunConfig] = None, bags=None, validate: bool = True):
        self.schema = schema
        self.config = config or RunConfig()
        self.validate = validate
        self._init_weak(schema, self.config, bags)
        if not self.weak_trees:
            raise ValueError("a random forest needs at least one weak learner")

    def predict(self, inst: Instance) -> Prediction:
        outputs = self.weak_predictions(inst)
        return self._combine(outputs)

    def _combine(self, outputs) -> Prediction:
        if len(outputs) == 1:
            return outputs[0]
        if self.schema.is_classification:
            counts = [0] * self.schema.class_count
            for p in outputs:
                counts[p.value] += 1
            top = max(counts)
            # ties go to the class of the lowest-id learner among the tied classes
            first = next(p.value for p in outputs if counts[p.value] == top)
            return _plurality(outputs, self.schema.class_count, first)
        return Prediction(math.fsum(p.value for p in outputs) / len(outputs))

    def step(self, inst: Instance) -> StepResult:
        if self.validate:
            validate_instance(self.schema, inst)
        outputs = self.weak_predictions(inst)
        prediction = self._combine(outputs)
        self.learn(inst)
        return StepResult(prediction, used_ensemble=True, ensemble=prediction, weak=tuple(outputs))

    def learn(self, inst: Instance) -> None:
        self._learn_weak(inst)

    def memory_estimate(self) -> int:
        return sum(t.memory_estimate() for t in self.weak_trees)


class SingleTree:
    """Adapter giving a bare Hoeffding tree the forests' step interface."""

    def __init__(self, schema: Schema, config: Optional[RunConfig] = None, validate: bool = True):
        self.schema = schema
        self.config = config or RunConfig()
        self.validate = validate
        self.tree = make_tree(schema, self.config)

    def predict(self, inst: Instance) -> Prediction:
        return self.tree.predict(inst)

    def learn(self, inst: Instance) -> None:
        self.tree.learn(inst)

    def step(self, inst: Instance) -> StepResult:
        if self.validate:
            validate_instance(self.schema, inst)
        prediction = self.tree.predict(inst)
        self.tree.learn(inst)
        return StepResult(prediction, main=prediction)

    def memory_estimate(self) -> int:
        return self.tree.memory_estimate()


def hybrid_step(forest: HybridForest, inst: Instance):
    result = forest.step(inst)
    return result.prediction, result.drift, forest


def random_forest_step(forest: RandomForest, inst: Instance):
    result = forest.step(inst)
    return result.prediction, forest


MODELS = {"single": SingleTree, "rf": RandomForest, "hybrid": HybridForest}


def build_model(kind: str, schema: Schema, config: Optional[RunConfig] = None):
    try:
        cls = MODELS[kind]
    except KeyError:
        raise ValueError(f"unknown model {kind!r}; choose from {sorted(MODELS)}") from None
    return cls(schema, config)
