"""Incremental Hoeffding trees for classification and regression.

Classification leaves keep class counts plus one attribute observer per
splittable feature (a class-by-category table for nominal features, per-class
Gaussian estimators for numeric ones) and split on information gain.
Regression leaves keep running target moments plus per-feature (count, sum,
sum of squares) summaries and split on standard-deviation reduction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

from .core import Instance, Prediction, RunConfig, Schema

BYTES_PER_FIELD = 8
NUMERIC_CANDIDATES = 10
REGRESSION_BINS = 64
_SQRT2 = math.sqrt(2.0)


class InsufficientData(ValueError):
    pass


def hoeffding_epsilon(value_range: float, delta: float, n: int) -> float:
    """Half-width of the Hoeffding interval after ``n`` observations.

    With probability ``1 - delta`` the true mean of a variable bounded in a
    range of width ``value_range`` lies within epsilon of the sample mean.
    """
    if value_range < 0:
        raise ValueError(f"range must be non-negative, got {value_range}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return math.sqrt(value_range * value_range * math.log(1.0 / delta) / (2.0 * n))


@dataclass(frozen=True)
class HoeffdingBound:
    value_range: float
    delta: float
    n: int

    def __post_init__(self):
        hoeffding_epsilon(self.value_range, self.delta, self.n)

    @property
    def epsilon(self) -> float:
        return hoeffding_epsilon(self.value_range, self.delta, self.n)


def entropy(dist: Sequence[float]) -> float:
    total = sum(dist)
    if total <= 0:
        return 0.0
    h = 0.0
    for c in dist:
        if c > 0:
            p = c / total
            h -= p * math.log2(p)
    return h


def info_gain(pre: Sequence[float], branches: Sequence[Sequence[float]]) -> float:
    total = sum(pre)
    if total <= 0:
        return 0.0
    post = 0.0
    for b in branches:
        w = sum(b)
        if w > 0:
            post += w / total * entropy(b)
    return entropy(pre) - post


# -- attribute observers ------------------------------------------------------


class GaussianEstimator:
    """Running weight, mean and sum of squared deviations (Welford)."""

    __slots__ = ("weight", "mean", "m2")

    def __init__(self):
        self.weight = 0.0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, x: float, w: float = 1.0) -> None:
        self.weight += w
        d = x - self.mean
        self.mean += d * w / self.weight
        self.m2 += w * d * (x - self.mean)

    @property
    def variance(self) -> float:
        """Population variance of the observed values."""
        if self.weight <= 0:
            return 0.0
        return max(self.m2, 0.0) / self.weight

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def cdf(self, x: float) -> float:
        if self.weight <= 0:
            return 0.0
        sd = self.std
        if sd <= 0.0:
            return 1.0 if x >= self.mean else 0.0
        return 0.5 * (1.0 + math.erf((x - self.mean) / (sd * _SQRT2)))


class NominalClassObserver:
    __slots__ = ("table",)

    def __init__(self, category_count: int, class_count: int):
        self.table = [[0.0] * class_count for _ in range(category_count)]

    def observe(self, value, label: int) -> None:
        self.table[int(value)][label] += 1.0

    def field_count(self) -> int:
        return len(self.table) * len(self.table[0])

    def best_split(self, pre: Sequence[float]):
        """Branch-per-category split; returns (gain, None, branch distributions)."""
        branches = [list(row) for row in self.table]
        if sum(1 for row in branches if sum(row) > 0) < 2:
            return 0.0, None, branches
        return info_gain(pre, branches), None, branches


class NumericClassObserver:
    __slots__ = ("estimators", "mins", "maxs")

    def __init__(self, class_count: int):
        self.estimators = [GaussianEstimator() for _ in range(class_count)]
        self.mins = [math.inf] * class_count
        self.maxs = [-math.inf] * class_count

    def observe(self, value, label: int) -> None:
        self.estimators[label].update(value)
        if value < self.mins[label]:
            self.mins[label] = value
        if value > self.maxs[label]:
            self.maxs[label] = value

    def field_count(self) -> int:
        return 5 * len(self.estimators)

    def split_dists(self, threshold: float):
        left, right = [], []
        for est, lo, hi in zip(self.estimators, self.mins, self.maxs):
            w = est.weight
            if w <= 0:
                left.append(0.0)
                right.append(0.0)
            elif threshold < lo:
                left.append(0.0)
                right.append(w)
            elif threshold >= hi:
                left.append(w)
                right.append(0.0)
            else:
                lw = w * est.cdf(threshold)
                left.append(lw)
                right.append(w - lw)
        return left, right

    def best_split(self, pre: Sequence[float]):
        observed = [i for i, e in enumerate(self.estimators) if e.weight > 0]
        if not observed:
            return 0.0, None, None
        lo = min(self.mins[i] for i in observed)
        hi = max(self.maxs[i] for i in observed)
        if not hi > lo:
            return 0.0, None, None
        best = (0.0, None, None)
        step = (hi - lo) / (NUMERIC_CANDIDATES + 1)
        for i in range(1, NUMERIC_CANDIDATES + 1):
            t = lo + step * i
            left, right = self.split_dists(t)
            gain = info_gain(pre, (left, right))
            if best[1] is None or gain > best[0]:
                best = (gain, t, [left, right])
        return best


class NominalRegObserver:
    __slots__ = ("stats",)

    def __init__(self, category_count: int):
        self.stats = [[0.0, 0.0, 0.0] for _ in range(category_count)]

    def observe(self, value, target: float) -> None:
        s = self.stats[int(value)]
        s[0] += 1.0
        s[1] += target
        s[2] += target * target

    def freeze(self) -> None:
        pass

    def field_count(self) -> int:
        return 3 * len(self.stats)

    def best_split(self, parent_sd: float):
        branches = [tuple(s) for s in self.stats]
        if sum(1 for b in branches if b[0] > 0) < 2:
            return 0.0, None, branches
        return sd_reduction(parent_sd, branches), None, branches


class NumericRegObserver:
    """Equal-width histogram over the range seen before the first check.

    Raw (value, target) pairs are buffered until ``freeze`` fixes the bin
    edges; later values outside the range fall into the end bins.
    """

    __slots__ = ("buffer", "lo", "width", "bins")

    def __init__(self):
        self.buffer = []
        self.lo = 0.0
        self.width = 0.0
        self.bins = None

    def observe(self, value, target: float) -> None:
        if self.bins is None:
            self.buffer.append((value, target))
        else:
            self._add(value, target)

    def _add(self, value, target):
        if self.width > 0:
            i = int((value - self.lo) / self.width)
            i = 0 if i < 0 else (REGRESSION_BINS - 1 if i >= REGRESSION_BINS else i)
        else:
            i = 0
        b = self.bins[i]
        b[0] += 1.0
        b[1] += target
        b[2] += target * target

    @property
    def frozen(self) -> bool:
        return self.bins is not None

    def freeze(self) -> None:
        if self.bins is not None:
            return
        self.bins = [[0.0, 0.0, 0.0] for _ in range(REGRESSION_BINS)]
        if self.buffer:
            values = [v for v, _ in self.buffer]
            self.lo = min(values)
            self.width = (max(values) - self.lo) / REGRESSION_BINS
        for v, t in self.buffer:
            self._add(v, t)
        self.buffer = []

    def field_count(self) -> int:
        return 3 * REGRESSION_BINS + 2

    def best_split(self, parent_sd: float):
        self.freeze()
        if self.width <= 0:
            return 0.0, None, None
        total = [0.0, 0.0, 0.0]
        for b in self.bins:
            total[0] += b[0]
            total[1] += b[1]
            total[2] += b[2]
        best = (0.0, None, None)
        left = [0.0, 0.0, 0.0]
        for i in range(REGRESSION_BINS - 1):
            b = self.bins[i]
            left[0] += b[0]
            left[1] += b[1]
            left[2] += b[2]
            if left[0] <= 0 or left[0] >= total[0]:
                continue
            right = (total[0] - left[0], total[1] - left[1], total[2] - left[2])
            branches = [tuple(left), right]
            score = sd_reduction(parent_sd, branches)
            if best[1] is None or score > best[0]:
                best = (score, self.lo + self.width * (i + 1), branches)
        return best


def _sd(count: float, total: float, total_sq: float) -> float:
    if count <= 0:
        return 0.0
    mean = total / count
    return math.sqrt(max(total_sq / count - mean * mean, 0.0))


def sd_reduction(parent_sd: float, branches) -> float:
    """Standard-deviation reduction divided by the parent's standard deviation."""
    if parent_sd <= 0:
        return 0.0
    n = sum(b[0] for b in branches)
    if n <= 0:
        return 0.0
    weighted = sum(b[0] / n * _sd(*b) for b in branches if b[0] > 0)
    return max(0.0, min(1.0, (parent_sd - weighted) / parent_sd))


# -- leaf statistics ----------------------------------------------------------


@dataclass
class CandidateSplit:
    feature: Optional[int]
    merit: float
    threshold: Optional[float] = None
    branch_stats: Optional[list] = None

    @property
    def is_null(self) -> bool:
        return self.feature is None


NULL_SPLIT = CandidateSplit(None, 0.0)


class LeafStats:
    """Sufficient statistics of one classification leaf."""

    def __init__(self, schema: Schema, available: Sequence[int]):
        c = schema.class_count
        self.class_counts = [0.0] * c
        self.available = tuple(available)
        self.observers = {}
        for i in self.available:
            spec = schema.features[i]
            if spec.is_nominal:
                self.observers[i] = NominalClassObserver(spec.category_count, c)
            else:
                self.observers[i] = NumericClassObserver(c)
        self.seen_since_check = 0

    @property
    def total(self) -> float:
        return sum(self.class_counts)

    def observe(self, inst: Instance) -> None:
        y = inst.target
        self.class_counts[y] += 1.0
        values = inst.values
        for i, obs in self.observers.items():
            obs.observe(values[i], y)
        self.seen_since_check += 1

    def field_count(self) -> int:
        return len(self.class_counts) + 2 + sum(o.field_count() for o in self.observers.values())


class LeafStatsReg:
    """Sufficient statistics of one regression leaf."""

    def __init__(self, schema: Schema, available: Sequence[int]):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.available = tuple(available)
        self.observers = {}
        for i in self.available:
            spec = schema.features[i]
            self.observers[i] = NominalRegObserver(spec.category_count) if spec.is_nominal else NumericRegObserver()
        self.seen_since_check = 0

    @property
    def total(self) -> int:
        return self.count

    @property
    def variance(self) -> float:
        return max(self.m2, 0.0) / self.count if self.count else 0.0

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def observe(self, inst: Instance) -> None:
        y = float(inst.target)
        self.count += 1
        d = y - self.mean
        self.mean += d / self.count
        self.m2 += d * (y - self.mean)
        values = inst.values
        for i, obs in self.observers.items():
            obs.observe(values[i], y)
        self.seen_since_check += 1

    def freeze(self) -> None:
        for obs in self.observers.values():
            obs.freeze()

    def field_count(self) -> int:
        return 5 + sum(o.field_count() for o in self.observers.values())


def observe_classification(leaf: LeafStats, inst: Instance) -> LeafStats:
    leaf.observe(inst)
    return leaf


def observe_regression(leaf: LeafStatsReg, inst: Instance) -> LeafStatsReg:
    leaf.observe(inst)
    return leaf


def _top_two(candidates: List[CandidateSplit]):
    # a leaf with no features left still compares null against null
    candidates.extend((NULL_SPLIT, NULL_SPLIT))
    candidates.sort(key=lambda s: s.merit, reverse=True)
    return candidates[0], candidates[1]


def best_two_splits_classification(leaf: LeafStats):
    """Two highest-gain candidates, one per feature, the null split included."""
    if leaf.total < 2:
        raise InsufficientData(f"leaf has {leaf.total:g} observations, need at least 2")
    pre = leaf.class_counts
    candidates = []
    for i, obs in leaf.observers.items():
        gain, threshold, branches = obs.best_split(pre)
        if branches is not None:
            candidates.append(CandidateSplit(i, gain, threshold, branches))
    return _top_two(candidates)


def best_two_splits_regression(leaf: LeafStatsReg):
    """Two highest normalised-SDR candidates, the null split included."""
    if leaf.total < 2:
        raise InsufficientData(f"leaf has {leaf.total} observations, need at least 2")
    parent_sd = leaf.std
    candidates = []
    for i, obs in leaf.observers.items():
        score, threshold, branches = obs.best_split(parent_sd)
        if branches is not None:
            candidates.append(CandidateSplit(i, score, threshold, branches))
    return _top_two(candidates)


def try_split_classification(leaf: LeafStats, config: RunConfig, schema: Schema) -> Optional[CandidateSplit]:
    """Return the split to install, or None.

    Splits when the gain gap between the two best candidates exceeds the
    Hoeffding epsilon for a range of log2(class_count), or when epsilon has
    fallen below the tie threshold.
    """
    if leaf.total < 2:
        return None
    best, second = best_two_splits_classification(leaf)
    if best.is_null or best.merit <= 0:
        return None
    eps = hoeffding_epsilon(math.log2(schema.class_count), config.delta, int(leaf.total))
    if best.merit - second.merit > eps or eps < config.tie_threshold:
        return best
    return None


def try_split_regression(leaf: LeafStatsReg, config: RunConfig, schema: Schema) -> Optional[CandidateSplit]:
    """Return the split to install, or None.

    Scores lie in [0, 1]; the test is on the ratio second/best with range 1.
    """
    if leaf.total < 2:
        return None
    best, second = best_two_splits_regression(leaf)
    if best.is_null or best.merit <= 0:
        return None
    eps = hoeffding_epsilon(1.0, config.delta, leaf.total)
    if second.merit / best.merit < 1.0 - eps or eps < config.tie_threshold:
        return best
    return None


# -- trees --------------------------------------------------------------------


class Leaf:
    __slots__ = ("stats", "cache", "depth")

    def __init__(self, stats, cache, depth: int):
        self.stats = stats
        self.cache = cache
        self.depth = depth

    is_leaf = True


class SplitNode:
    __slots__ = ("feature", "threshold", "children", "cache", "depth")

    def __init__(self, feature, threshold, children, cache, depth):
        self.feature = feature
        self.threshold = threshold
        self.children = children
        self.cache = cache
        self.depth = depth

    is_leaf = False

    def branch(self, values) -> int:
        v = values[self.feature]
        if self.threshold is None:
            return int(v)
        return 0 if v <= self.threshold else 1


class _BaseTree:
    """Shared routing, growth and bookkeeping for both tree kinds."""

    def __init__(self, schema: Schema, config: Optional[RunConfig] = None):
        self.schema = schema
        self.config = config or RunConfig()
        self.root = Leaf(self._new_stats(range(schema.n_features)), self._empty_cache(), 0)
        self.n_splits = 0
        self.n_seen = 0

    def _route(self, values):
        parent, branch = None, -1
        node = self.root
        while not node.is_leaf:
            parent, branch = node, node.branch(values)
            node = node.children[branch]
        return node, parent, branch

    def leaf_for(self, inst: Instance) -> Leaf:
        return self._route(inst.values)[0]

    def learn(self, inst: Instance) -> None:
        self.n_seen += 1
        leaf, parent, branch = self._route(inst.values)
        stats = leaf.stats
        stats.observe(inst)
        if stats.seen_since_check >= self.config.grace_period:
            stats.seen_since_check = 0
            choice = self._try_split(stats)
            if choice is not None:
                self._install(leaf, parent, branch, choice)

    def _install(self, leaf: Leaf, parent, branch: int, choice: CandidateSplit) -> None:
        spec = self.schema.features[choice.feature]
        available = leaf.stats.available
        if spec.is_nominal:
            available = tuple(i for i in available if i != choice.feature)
        children = [Leaf(self._new_stats(available), self._branch_cache(b), leaf.depth + 1)
                    for b in choice.branch_stats]
        node = SplitNode(choice.feature, choice.threshold, children, self._leaf_cache(leaf), leaf.depth)
        if parent is None:
            self.root = node
        else:
            parent.children[branch] = node
        self.n_splits += 1

    def iter_nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.extend(node.children)

    @property
    def node_count(self) -> int:
        return sum(1 for _ in self.iter_nodes())

    @property
    def leaf_count(self) -> int:
        return sum(1 for n in self.iter_nodes() if n.is_leaf)

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.iter_nodes())

    def memory_estimate(self) -> int:
        """Byte estimate from a per-node field-count cost model."""
        fields = 0
        for node in self.iter_nodes():
            if node.is_leaf:
                fields += 2 + self._cache_fields() + node.stats.field_count()
            else:
                fields += 4 + len(node.children) + self._cache_fields()
        return fields * BYTES_PER_FIELD


class HoeffdingTree(_BaseTree):
    """Hoeffding classification tree with majority-class leaves."""

    def __init__(self, schema: Schema, config: Optional[RunConfig] = None):
        if not schema.is_classification:
            raise ValueError("HoeffdingTree needs a classification schema")
        super().__init__(schema, config)

    def _new_stats(self, available):
        return LeafStats(self.schema, available)

    def _empty_cache(self):
        return [0.0] * self.schema.class_count

    def _branch_cache(self, dist):
        return list(dist)

    def _leaf_cache(self, leaf):
        return list(leaf.stats.class_counts) if leaf.stats.total > 0 else list(leaf.cache)

    def _cache_fields(self) -> int:
        return self.schema.class_count

    def _try_split(self, stats):
        return try_split_classification(stats, self.config, self.schema)

    def predict(self, inst: Instance) -> Prediction:
        leaf = self._route(inst.values)[0]
        counts = leaf.stats.class_counts
        if leaf.stats.total <= 0:
            counts = leaf.cache
        return Prediction.from_counts(counts)


class HoeffdingRegressionTree(_BaseTree):
    """Hoeffding regression tree whose leaves predict the running target mean."""

    def __init__(self, schema: Schema, config: Optional[RunConfig] = None):
        if schema.is_classification:
            raise ValueError("HoeffdingRegressionTree needs a regression schema")
        super().__init__(schema, config)

    def _new_stats(self, available):
        return LeafStatsReg(self.schema, available)

    def _empty_cache(self):
        return 0.0

    def _branch_cache(self, branch):
        count, total = branch[0], branch[1]
        return total / count if count > 0 else 0.0

    def _leaf_cache(self, leaf):
        return leaf.stats.mean if leaf.stats.count else leaf.cache

    def _cache_fields(self) -> int:
        return 1

    def _try_split(self, stats):
        stats.freeze()
        return try_split_regression(stats, self.config, self.schema)

    def predict(self, inst: Instance) -> Prediction:
        leaf = self._route(inst.values)[0]
        if leaf.stats.count:
            return Prediction(leaf.stats.mean)
        return Prediction(leaf.cache)


def make_tree(schema: Schema, config: Optional[RunConfig] = None):
    if schema.is_classification:
        return HoeffdingTree(schema, config)
    return HoeffdingRegressionTree(schema, config)
