"""Instance streams: CSV/ARFF files, the waveform generator and drift injection.

File streams are read lazily, row by row. Every stream is re-iterable:
files are reopened and generators restart from their seed.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .core import FeatureSpec, Instance, Schema


class StreamError(Exception):
    pass


class ParseError(StreamError):
    def __init__(self, line: int, column, reason: str):
        self.line, self.column, self.reason = line, column, reason
        super().__init__(f"line {line}, column {column}: {reason}")


class SchemaMismatch(StreamError):
    pass


class MissingValue(StreamError):
    def __init__(self, line: int, column=None):
        self.line, self.column = line, column
        super().__init__(f"line {line}: missing value in column {column}")


class UnsupportedArffFeature(StreamError):
    pass


class IndexOutOfRange(StreamError):
    pass


MISSING_TOKENS = frozenset({"", "?", "NA", "NaN", "nan"})


class StreamSource:
    """A schema plus a restartable iterator over its instances."""

    def __init__(self, schema: Schema, factory: Callable[[], Iterator[Instance]], length: Optional[int] = None,
                 name: str = "stream"):
        self.schema = schema
        self._factory = factory
        self.length = length
        self.name = name

    def __iter__(self) -> Iterator[Instance]:
        return self._factory()

    def __len__(self):
        if self.length is None:
            raise TypeError("unbounded stream has no length")
        return self.length

    def take(self, n: int) -> list:
        out = []
        for inst in self:
            if len(out) >= n:
                break
            out.append(inst)
        return out


def from_instances(schema: Schema, instances: Sequence[Instance], name="memory") -> StreamSource:
    items = list(instances)
    return StreamSource(schema, lambda: iter(items), len(items), name)


# -- CSV ----------------------------------------------------------------------


def _parse_real(token: str, line: int, column: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(line, column, f"expected a number, got {token!r}") from None
    if not math.isfinite(value):
        raise ParseError(line, column, f"non-finite number {token!r}")
    return value


def load_csv(path, task: str = "regression", target: Optional[str] = None, nominal: Sequence[str] = (),
             names: Optional[Sequence[str]] = None, categories: Optional[dict] = None) -> StreamSource:
    """Stream a headered CSV file.

    ``target`` names the target column (default: last). Columns listed in
    ``nominal`` and the class column of a classification task are mapped to
    dense indices in order of first appearance; unless ``categories`` supplies
    the category lists, a counting pre-pass over the file discovers them.
    ``names`` overrides the header names (the header row is still skipped).
    """
    path = os.fspath(path)
    if task not in ("regression", "classification"):
        raise SchemaMismatch(f"unknown task {task!r}")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise SchemaMismatch(f"{path}: empty file")
    header = [h.strip() for h in header]
    if names is not None:
        if len(names) != len(header):
            raise SchemaMismatch(f"{path}: {len(header)} columns but {len(names)} names declared")
        header = list(names)
    if len(set(header)) != len(header):
        raise SchemaMismatch(f"{path}: duplicate column names")
    target = target if target is not None else header[-1]
    if target not in header:
        raise SchemaMismatch(f"{path}: target column {target!r} not in header")
    unknown = set(nominal) - set(header)
    if unknown:
        raise SchemaMismatch(f"{path}: nominal columns {sorted(unknown)} not in header")
    t_idx = header.index(target)
    feat_idx = [i for i in range(len(header)) if i != t_idx]
    categorical = set(nominal)
    if task == "classification":
        categorical.add(target)
    cats = {name: list(categories[name]) for name in (categories or {})}
    scan = [name for name in categorical if name not in cats]

    rows = 0
    found = {name: {} for name in scan}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            rows += 1
            if len(row) != len(header):
                raise ParseError(line_no, len(row), f"expected {len(header)} fields, got {len(row)}")
            for name in scan:
                tok = row[header.index(name)].strip()
                if tok in MISSING_TOKENS:
                    raise MissingValue(line_no, name)
                found[name].setdefault(tok, len(found[name]))
    for name in scan:
        cats[name] = list(found[name])
    lookup = {name: {tok: i for i, tok in enumerate(values)} for name, values in cats.items()}

    features = []
    for i in feat_idx:
        name = header[i]
        if name in categorical:
            features.append(FeatureSpec.nominal(name, max(2, len(cats[name]))))
        else:
            features.append(FeatureSpec.numeric(name))
    class_count = max(2, len(cats[target])) if task == "classification" else None
    schema = Schema(tuple(features), class_count)

    def convert(tok, name, line_no):
        tok = tok.strip()
        if tok in MISSING_TOKENS:
            raise MissingValue(line_no, name)
        if name in lookup:
            try:
                return lookup[name][tok]
            except KeyError:
                raise ParseError(line_no, name, f"unknown category {tok!r}") from None
        return _parse_real(tok, line_no, name)

    def iterate():
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise ParseError(line_no, len(row), f"expected {len(header)} fields, got {len(row)}")
                values = tuple(convert(row[i], header[i], line_no) for i in feat_idx)
                y = convert(row[t_idx], target, line_no)
                yield Instance(values, int(y) if task == "classification" else y)

    source = StreamSource(schema, iterate, rows, os.path.basename(path))
    source.categories = cats
    return source


# -- ARFF ---------------------------------------------------------------------


def _split_attribute(line: str):
    rest = line[len("@attribute"):].strip()
    if rest.startswith(("'", '"')):
        q = rest[0]
        end = rest.index(q, 1)
        return rest[1:end], rest[end + 1:].strip()
    parts = rest.split(None, 1)
    if len(parts) != 2:
        raise StreamError(f"malformed attribute line {line!r}")
    return parts[0], parts[1].strip()


def load_arff(path, target: Optional[str] = None) -> StreamSource:
    """Stream a dense ARFF file with numeric and nominal attributes.

    The last attribute is the target unless ``target`` names another one; a
    nominal target gives a classification stream, a numeric one regression.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    attrs = []
    data_line = None
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("%"):
                continue
            low = line.lower()
            if low.startswith("@relation"):
                continue
            if low.startswith("@attribute"):
                name, kind = _split_attribute(line)
                if kind.startswith("{"):
                    values = [v.strip().strip("'\"") for v in kind.strip("{}").split(",")]
                    attrs.append((name, values))
                elif kind.lower() in ("numeric", "real", "integer"):
                    attrs.append((name, None))
                else:
                    raise UnsupportedArffFeature(f"line {line_no}: attribute type {kind!r} not supported")
            elif low.startswith("@data"):
                data_line = line_no
                break
            else:
                raise ParseError(line_no, 0, f"unexpected header line {line!r}")
    if data_line is None:
        raise SchemaMismatch(f"{path}: no @data section")
    if not attrs:
        raise SchemaMismatch(f"{path}: no attributes")
    names = [a[0] for a in attrs]
    target = target if target is not None else names[-1]
    if target not in names:
        raise SchemaMismatch(f"{path}: target attribute {target!r} not declared")
    t_idx = names.index(target)
    feat_idx = [i for i in range(len(attrs)) if i != t_idx]
    features = []
    for i in feat_idx:
        name, values = attrs[i]
        features.append(FeatureSpec.numeric(name) if values is None else FeatureSpec.nominal(name, max(2, len(values))))
    t_values = attrs[t_idx][1]
    schema = Schema(tuple(features), None if t_values is None else max(2, len(t_values)))
    lookups = [None if v is None else {tok: j for j, tok in enumerate(v)} for _, v in attrs]

    def convert(tok, i, line_no):
        tok = tok.strip().strip("'\"")
        if tok in ("?", ""):
            raise MissingValue(line_no, names[i])
        lookup = lookups[i]
        if lookup is None:
            return _parse_real(tok, line_no, names[i])
        try:
            return lookup[tok]
        except KeyError:
            raise ParseError(line_no, names[i], f"unknown category {tok!r}") from None

    def rows():
        with open(path, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                if line_no <= data_line:
                    continue
                line = raw.strip()
                if not line or line.startswith("%"):
                    continue
                if line.startswith("{"):
                    raise UnsupportedArffFeature(f"line {line_no}: sparse rows not supported")
                yield line_no, next(csv.reader([line], quotechar="'", skipinitialspace=True))

    def iterate():
        for line_no, row in rows():
            if len(row) != len(attrs):
                raise ParseError(line_no, len(row), f"expected {len(attrs)} fields, got {len(row)}")
            values = tuple(convert(row[i], i, line_no) for i in feat_idx)
            y = convert(row[t_idx], t_idx, line_no)
            yield Instance(values, y)

    count = sum(1 for _ in rows())
    return StreamSource(schema, iterate, count, os.path.basename(path))


# -- synthetic streams --------------------------------------------------------

# Base waves of the classic waveform problem: triangles of height 6 peaking at
# positions 7, 15 and 11 (1-based) of the 21 attributes.
WAVEFORM_BASES = (
    (0, 1, 2, 3, 4, 5, 6, 5, 4, 3, 2, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0),
    (0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 5, 4, 3, 2, 1, 0),
    (0, 0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 5, 4, 3, 2, 1, 0, 0, 0, 0, 0),
)
# class -> (wave weighted by u, wave weighted by 1 - u)
WAVEFORM_PAIRS = ((0, 1), (0, 2), (1, 2))
WAVEFORM_FEATURES = 21
WAVEFORM_SCHEMA = Schema.numeric(WAVEFORM_FEATURES, class_count=3, prefix="att")

_CHUNK = 1024


def generate_waveform(count: Optional[int], rng_seed: int = 0) -> StreamSource:
    """Waveform stream: 21 noisy attributes, 3 equiprobable classes.

    Each instance mixes two base waves as ``u * a + (1 - u) * b`` with
    ``u ~ U[0, 1]`` and adds N(0, 1) noise per attribute. ``count=None``
    gives an unbounded stream.
    """
    if count is not None and count < 0:
        raise ValueError("count must be >= 0")
    bases = np.asarray(WAVEFORM_BASES, dtype=float)

    def iterate():
        rng = np.random.default_rng(rng_seed)
        produced = 0
        while count is None or produced < count:
            n = _CHUNK if count is None else min(_CHUNK, count - produced)
            labels = rng.integers(0, 3, size=n)
            u = rng.random(n)
            noise = rng.standard_normal((n, WAVEFORM_FEATURES))
            pairs = np.asarray(WAVEFORM_PAIRS)[labels]
            x = u[:, None] * bases[pairs[:, 0]] + (1.0 - u)[:, None] * bases[pairs[:, 1]] + noise
            for row, y in zip(x.tolist(), labels.tolist()):
                yield Instance(tuple(row), int(y))
            produced += n

    return StreamSource(WAVEFORM_SCHEMA, iterate, count, "waveform")


def generate_dominant_regression(count: int, rng_seed: int = 0, n_features: int = 8, dominant_noise: float = 0.01,
                                 proxy_noise: float = 0.05, target_noise: float = 0.04) -> StreamSource:
    """Regression stream whose features all track one latent size variable.

    A latent ``s ~ U[0, 1)`` drives the target ``5 + 10 * s`` (with relative
    Gaussian noise ``target_noise``). Feature 0 observes ``s`` with small noise
    and dominates; the others observe it with ``proxy_noise``. This mimics
    size-driven UCI sets such as abalone and serves as their offline stand-in.
    """
    if n_features < 1:
        raise ValueError("need at least one feature")
    schema = Schema.numeric(n_features, None)
    scales = np.full(n_features, proxy_noise)
    scales[0] = dominant_noise

    def iterate():
        rng = np.random.default_rng(rng_seed)
        produced = 0
        while produced < count:
            n = min(_CHUNK, count - produced)
            s = rng.random(n)
            x = s[:, None] + scales[None, :] * rng.standard_normal((n, n_features))
            y = (5.0 + 10.0 * s) * (1.0 + target_noise * rng.standard_normal(n))
            for row, t in zip(x.tolist(), y.tolist()):
                yield Instance(tuple(row), t)
            produced += n

    return StreamSource(schema, iterate, count, "dominant")


# -- drift --------------------------------------------------------------------


@dataclass(frozen=True)
class DriftSpec:
    """Where the concept changes and how.

    ``kind`` is ``"abrupt"`` (switch at ``start``) or ``"gradual"`` (ramp
    from ``start`` to ``end``). The new concept relabels classes with
    ``class_permutation`` and/or reorders features with
    ``feature_permutation`` (new value i = old value ``feature_permutation[i]``).
    """

    kind: str
    start: int
    end: Optional[int] = None
    class_permutation: Optional[tuple] = None
    feature_permutation: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("abrupt", "gradual"):
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if self.start < 1:
            raise IndexOutOfRange(f"drift start must be >= 1, got {self.start}")
        if self.kind == "gradual" and (self.end is None or self.end <= self.start):
            raise IndexOutOfRange("gradual drift needs start < end")

    @classmethod
    def abrupt(cls, at: int, **kw) -> "DriftSpec":
        return cls("abrupt", at, None, **kw)

    @classmethod
    def gradual(cls, start: int, end: int, **kw) -> "DriftSpec":
        return cls("gradual", start, end, **kw)

    @classmethod
    def parse(cls, text: str, **kw) -> "DriftSpec":
        """Parse ``abrupt:IDX`` or ``gradual:START:END``."""
        parts = text.split(":")
        try:
            if parts[0] == "abrupt" and len(parts) == 2:
                return cls.abrupt(int(parts[1]), **kw)
            if parts[0] == "gradual" and len(parts) == 3:
                return cls.gradual(int(parts[1]), int(parts[2]), **kw)
        except ValueError as exc:
            raise ValueError(f"bad drift spec {text!r}: {exc}") from None
        raise ValueError(f"bad drift spec {text!r}; expected abrupt:IDX or gradual:START:END")

    def probability(self, index: int) -> float:
        """Probability that the instance at ``index`` follows the new concept."""
        if index < self.start:
            return 0.0
        if self.kind == "abrupt" or index >= self.end:
            return 1.0
        return (index - self.start) / (self.end - self.start)


def _check_permutation(perm, size, what):
    if perm is not None and sorted(perm) != list(range(size)):
        raise ValueError(f"{what} permutation {perm!r} is not a permutation of range({size})")


def swap_classes(class_count: int, a: int = 0, b: int = 1) -> tuple:
    perm = list(range(class_count))
    perm[a], perm[b] = perm[b], perm[a]
    return tuple(perm)


def inject_drift(source: StreamSource, spec: DriftSpec, rng_seed: int = 0) -> StreamSource:
    """Apply ``spec``'s concept transform to ``source`` from the drift point on."""
    schema = source.schema
    if spec.class_permutation is not None:
        if not schema.is_classification:
            raise ValueError("class permutation needs a classification stream")
        _check_permutation(spec.class_permutation, schema.class_count, "class")
    if spec.feature_permutation is not None:
        _check_permutation(spec.feature_permutation, schema.n_features, "feature")
        kinds = [schema.features[i].kind for i in spec.feature_permutation]
        cats = [schema.features[i].category_count for i in spec.feature_permutation]
        if kinds != [f.kind for f in schema.features] or cats != [f.category_count for f in schema.features]:
            raise ValueError("feature permutation must map features onto features of the same kind")
    if source.length is not None:
        last = spec.start if spec.kind == "abrupt" else spec.end
        if last > source.length:
            raise IndexOutOfRange(f"drift point {last} beyond stream length {source.length}")
    cperm, fperm = spec.class_permutation, spec.feature_permutation

    def transform(inst):
        values, target = inst.values, inst.target
        if fperm is not None:
            values = tuple(values[j] for j in fperm)
        if cperm is not None:
            target = cperm[target]
        return Instance(values, target)

    def iterate():
        rng = np.random.default_rng(rng_seed)
        for i, inst in enumerate(source):
            p = spec.probability(i)
            if p >= 1.0 or (p > 0.0 and rng.random() < p):
                yield transform(inst)
            else:
                yield inst

    return StreamSource(schema, iterate, source.length, f"{source.name}+{spec.kind}")
