"""Domain types shared by the learners, streams and evaluation harness."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

NUMERIC = "numeric"
NOMINAL = "nominal"


class ValidationError(ValueError):
    """An instance or configuration does not satisfy its schema."""

    def __init__(self, field_name, reason):
        self.field = field_name
        self.reason = reason
        super().__init__(f"{field_name}: {reason}")


class ArityMismatch(ValidationError):
    pass


class ValueOutOfDomain(ValidationError):
    pass


class TargetKindMismatch(ValidationError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str = NUMERIC
    category_count: Optional[int] = None

    def __post_init__(self):
        if self.kind == NOMINAL:
            if self.category_count is None or self.category_count < 2:
                raise ConfigError(f"nominal feature {self.name!r} needs category_count >= 2")
        elif self.kind == NUMERIC:
            if self.category_count is not None:
                raise ConfigError(f"numeric feature {self.name!r} cannot have categories")
        else:
            raise ConfigError(f"unknown feature kind {self.kind!r}")

    @property
    def is_nominal(self) -> bool:
        return self.kind == NOMINAL

    @classmethod
    def numeric(cls, name: str) -> "FeatureSpec":
        return cls(name, NUMERIC)

    @classmethod
    def nominal(cls, name: str, category_count: int) -> "FeatureSpec":
        return cls(name, NOMINAL, category_count)


@dataclass(frozen=True)
class Schema:
    """Ordered feature description plus the task.

    ``class_count`` is set for classification and ``None`` for regression.
    """

    features: tuple
    class_count: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if not self.features:
            raise ConfigError("schema needs at least one feature")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ConfigError("feature names must be unique")
        if self.class_count is not None and self.class_count < 2:
            raise ConfigError("classification needs class_count >= 2")

    @property
    def is_classification(self) -> bool:
        return self.class_count is not None

    @property
    def task(self) -> str:
        return "classification" if self.is_classification else "regression"

    @property
    def n_features(self) -> int:
        return len(self.features)

    def project(self, indices: Sequence[int]) -> "Schema":
        return Schema(tuple(self.features[i] for i in indices), self.class_count)

    @classmethod
    def numeric(cls, n_features: int, class_count: Optional[int] = None, prefix="x") -> "Schema":
        return cls(tuple(FeatureSpec.numeric(f"{prefix}{i}") for i in range(n_features)), class_count)


@dataclass(frozen=True)
class Instance:
    """One stream sample.

    Nominal values are dense zero-based category indices stored alongside the
    numeric values. ``target`` is a class index or a real target.
    """

    values: tuple
    target: Union[int, float]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))

    def project(self, indices: Sequence[int]) -> "Instance":
        values = self.values
        return Instance(tuple(values[i] for i in indices), self.target)


@dataclass(frozen=True)
class Prediction:
    """Output of a learner: a class index with its vote vector, or a real value."""

    value: Union[int, float]
    votes: Optional[tuple] = None

    @classmethod
    def from_counts(cls, counts: Sequence[float]) -> "Prediction":
        total = sum(counts)
        n = len(counts)
        if total <= 0:
            return cls(0, tuple(1.0 / n for _ in range(n)))
        best = max(range(n), key=counts.__getitem__)
        return cls(best, tuple(c / total for c in counts))


@dataclass(frozen=True)
class RunConfig:
    """Learner and controller parameters.

    ``weak_learner_count=None`` sizes the ensemble automatically: the smallest
    count whose feature-coverage confidence reaches ``coverage_target``.
    """

    delta: float = 1e-7
    grace_period: int = 100
    tie_threshold: float = 0.5
    weak_learner_count: Optional[int] = None
    d_hybrid_impact: float = 0.2
    k_window_size: int = 15
    regression_correctness_tolerance: float = 0.10
    drift_threshold: float = 0.5
    rng_seed: int = 0
    enforce_coverage: bool = False
    coverage_target: float = 0.99

    def __post_init__(self):
        def check(ok, name, msg):
            if not ok:
                raise ConfigError(f"{name} {msg} (got {getattr(self, name)!r})")

        check(0.0 < self.delta < 1.0, "delta", "must lie in (0, 1)")
        check(isinstance(self.grace_period, int) and self.grace_period >= 1, "grace_period", "must be a positive integer")
        check(self.tie_threshold >= 0.0, "tie_threshold", "must be >= 0")
        check(self.weak_learner_count is None
              or (isinstance(self.weak_learner_count, int) and self.weak_learner_count >= 0),
              "weak_learner_count", "must be a non-negative integer or None")
        check(0.0 <= self.d_hybrid_impact <= 1.0, "d_hybrid_impact", "must lie in [0, 1]")
        check(isinstance(self.k_window_size, int) and self.k_window_size >= 1, "k_window_size", "must be >= 1")
        check(0.0 < self.regression_correctness_tolerance < 1.0,
              "regression_correctness_tolerance", "must lie in (0, 1)")
        check(0.0 < self.drift_threshold <= 1.0, "drift_threshold", "must lie in (0, 1]")
        check(isinstance(self.rng_seed, int) and -(2 ** 63) <= self.rng_seed < 2 ** 64,
              "rng_seed", "must be a 64-bit integer")
        check(0.0 < self.coverage_target < 1.0, "coverage_target", "must lie in (0, 1)")


def validate_instance(schema: Schema, inst: Instance) -> None:
    """Raise a ``ValidationError`` subclass unless ``inst`` fits ``schema``."""
    if len(inst.values) != schema.n_features:
        raise ArityMismatch("values", f"expected {schema.n_features} values, got {len(inst.values)}")
    for spec, value in zip(schema.features, inst.values):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueOutOfDomain(spec.name, f"non-numeric value {value!r}")
        if spec.is_nominal:
            if not math.isfinite(value) or value != int(value):
                raise ValueOutOfDomain(spec.name, f"category {value!r} is not an index")
            if not 0 <= value < spec.category_count:
                raise ValueOutOfDomain(spec.name, f"category {value!r} not in [0, {spec.category_count})")
        elif not math.isfinite(value):
            raise ValueOutOfDomain(spec.name, f"value {value!r} is not finite")
    target = inst.target
    if schema.is_classification:
        if isinstance(target, bool) or not isinstance(target, int):
            raise TargetKindMismatch("target", f"expected a class index, got {target!r}")
        if not 0 <= target < schema.class_count:
            raise ValueOutOfDomain("target", f"class {target} not in [0, {schema.class_count})")
    else:
        if isinstance(target, bool) or not isinstance(target, (int, float)):
            raise TargetKindMismatch("target", f"expected a real target, got {target!r}")
        if not math.isfinite(target):
            raise ValueOutOfDomain("target", f"target {target!r} is not finite")


def is_correct(prediction: Prediction, target, tolerance: float) -> bool:
    """Correctness used by the impact controller and the metrics.

    Classification compares class indices. Regression accepts a relative error
    up to ``tolerance``; the denominator is floored at 1e-12 so a zero target
    falls back to an absolute test.
    """
    if prediction.votes is not None:
        return prediction.value == target
    return abs(prediction.value - target) / max(abs(target), 1e-12) <= tolerance
