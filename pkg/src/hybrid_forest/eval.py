"""Prequential (test-then-train) evaluation and run aggregation."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from .core import Prediction, is_correct
from .forest import StepResult


class TaskMismatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


TRACE_COLUMNS = ("index", "prediction", "truth", "correct", "rolling_acc", "cumulative_acc", "drift_flag",
                 "mem_estimate")


@dataclass(frozen=True)
class MetricConfig:
    w_metric: int = 200
    threshold: float = 0.90
    tolerance: float = 0.10
    repeats: int = 1
    memory_stride: int = 500

    def __post_init__(self):
        if self.w_metric < 1:
            raise ValueError("w_metric must be positive")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must lie in (0, 1]")
        if not 0.0 < self.tolerance < 1.0:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.repeats < 1 or self.memory_stride < 1:
            raise ValueError("repeats and memory_stride must be positive")


@dataclass
class PrequentialReport:
    """Per-sample trace of one run, stored column-wise."""

    w_metric: int
    method: str = ""
    dataset: str = ""
    seed: Optional[int] = None
    predictions: list = field(default_factory=list)
    truths: list = field(default_factory=list)
    correct: List[int] = field(default_factory=list)
    rolling: List[float] = field(default_factory=list)
    cumulative: List[float] = field(default_factory=list)
    drift: List[int] = field(default_factory=list)
    used_ensemble: List[int] = field(default_factory=list)
    memory: dict = field(default_factory=dict)
    complete: bool = True
    error: Optional[str] = None
    _hits: int = field(default=0, repr=False)
    _win: int = field(default=0, repr=False)

    def __len__(self):
        return len(self.correct)

    def record(self, prediction, truth, ok: bool, drift: bool, used_ensemble: bool = False) -> None:
        self.predictions.append(prediction)
        self.truths.append(truth)
        self.correct.append(1 if ok else 0)
        i = len(self.correct) - 1
        w = self.w_metric
        self._hits += self.correct[-1]
        self._win += self.correct[-1] - (self.correct[i - w] if i >= w else 0)
        self.rolling.append(self._win / min(i + 1, w))
        self.cumulative.append(self._hits / (i + 1))
        self.drift.append(1 if drift else 0)
        self.used_ensemble.append(1 if used_ensemble else 0)

    @property
    def final_accuracy(self) -> Optional[float]:
        return self.cumulative[-1] if self.cumulative else None

    @property
    def drift_indices(self) -> List[int]:
        return [i for i, f in enumerate(self.drift) if f]

    def convergence_index(self, threshold: float = 0.90) -> Optional[int]:
        return convergence_index(self, threshold)

    def summary(self, threshold: float = 0.90) -> dict:
        return {
            "method": self.method,
            "dataset": self.dataset,
            "seeds": [self.seed] if self.seed is not None else [],
            "samples": len(self),
            "mean_accuracy": self.final_accuracy,
            "stddev": 0.0 if self.correct else None,
            "convergence_index": convergence_index(self, threshold) if self.correct else None,
            "drift_indices": self.drift_indices,
            "memory_final": self.memory[max(self.memory)] if self.memory else None,
            "complete": self.complete,
            "error": self.error,
        }

    def write_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for i in range(len(self)):
            mem = self.memory.get(i)
            writer.writerow((i, _fmt(self.predictions[i]), _fmt(self.truths[i]), self.correct[i],
                             repr(self.rolling[i]), repr(self.cumulative[i]), self.drift[i],
                             "" if mem is None else mem))

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def _fmt(value):
    return repr(value) if isinstance(value, float) else value


def _step(model, inst) -> StepResult:
    step = getattr(model, "step", None)
    if step is not None:
        return step(inst)
    prediction = model.predict(inst)
    model.learn(inst)
    return StepResult(prediction)


def run_prequential(model, source, cfg: Optional[MetricConfig] = None, method: str = "", seed=None,
                    limit: Optional[int] = None) -> PrequentialReport:
    """Test each instance on ``model`` first, then train on it.

    Stream errors stop the run; the partial report comes back with
    ``complete=False`` and the error message attached.
    """
    cfg = cfg or MetricConfig()
    schema = getattr(model, "schema", None)
    if schema is not None and schema.is_classification != source.schema.is_classification:
        raise TaskMismatch(f"model is for {schema.task}, stream is {source.schema.task}")
    classification = source.schema.is_classification
    report = PrequentialReport(cfg.w_metric, method, getattr(source, "name", ""), seed)
    memory = getattr(model, "memory_estimate", None)
    it = iter(source)
    i = 0
    while limit is None or i < limit:
        try:
            inst = next(it)
        except StopIteration:
            break
        except Exception as exc:  # surfaced on the report, not raised
            report.complete = False
            report.error = f"{type(exc).__name__}: {exc}"
            break
        result = _step(model, inst)
        p = result.prediction
        ok = p.value == inst.target if classification else is_correct(p, inst.target, cfg.tolerance)
        report.record(p.value, inst.target, ok, result.drift is not None, result.used_ensemble)
        if memory is not None and (i + 1) % cfg.memory_stride == 0:
            report.memory[i] = memory()
        i += 1
    if memory is not None and i and (i - 1) not in report.memory:
        report.memory[i - 1] = memory()
    return report


def rolling_accuracy(correct: Sequence[int], w: int) -> List[float]:
    out, acc = [], 0
    for i, c in enumerate(correct):
        acc += c
        if i >= w:
            acc -= correct[i - w]
        out.append(acc / min(i + 1, w))
    return out


def convergence_index(report: PrequentialReport, threshold: float = 0.90) -> Optional[int]:
    """Samples needed before the rolling accuracy reaches ``threshold`` and holds.

    The window must be full, and the accuracy must stay at or above
    ``threshold - 0.05`` over the next ``w_metric`` samples (as many as the
    stream still has). Returns the sample count, or None if never reached.
    """
    if not len(report):
        raise ValueError("empty report")
    w = report.w_metric
    rolling = report.rolling
    n = len(rolling)
    floor = threshold - 0.05
    for i in range(w - 1, n):
        if rolling[i] < threshold:
            continue
        if all(r >= floor for r in rolling[i + 1:min(n, i + 1 + w)]):
            return i + 1
    return None


@dataclass(frozen=True)
class RunSummary:
    mean_accuracy: float
    stddev: float
    convergence_index: Optional[float]
    runs: int
    converged_runs: int

    def as_dict(self) -> dict:
        return {"mean_accuracy": self.mean_accuracy, "stddev": self.stddev,
                "convergence_index": self.convergence_index, "runs": self.runs,
                "converged_runs": self.converged_runs}


def aggregate_runs(reports: Sequence[PrequentialReport], threshold: float = 0.90) -> RunSummary:
    """Mean and population standard deviation of final accuracy across runs."""
    if not reports:
        raise ValueError("need at least one report")
    lengths = {len(r) for r in reports}
    if len(lengths) != 1:
        raise LengthMismatch(f"reports have different lengths: {sorted(lengths)}")
    finals = sorted(r.final_accuracy for r in reports)
    mean = math.fsum(finals) / len(finals)
    std = statistics.pstdev(finals, mu=mean) if len(finals) > 1 else 0.0
    conv = sorted(c for c in (convergence_index(r, threshold) for r in reports) if c is not None)
    return RunSummary(mean, std, math.fsum(conv) / len(conv) if conv else None, len(reports), len(conv))


def drift_recovery_trace(report: PrequentialReport, drift_spec):
    """(detection latency or None, post-drift accuracy dip).

    Latency counts from the drift start to the first drift event at or after
    it. The dip is the rolling accuracy just before the drift minus the lowest
    rolling accuracy after it.
    """
    start = drift_spec.start
    if start >= len(report):
        raise ValueError(f"drift point {start} beyond report length {len(report)}")
    latency = next((i - start for i in report.drift_indices if i >= start), None)
    before = report.rolling[start - 1]
    dip = before - min(report.rolling[start:])
    return latency, dip


def summary_document(method: str, dataset: str, seeds, reports, threshold: float, drift_spec=None) -> dict:
    agg = aggregate_runs(reports, threshold)
    latencies = [drift_recovery_trace(r, drift_spec)[0] for r in reports] if drift_spec else []
    return {
        "method": method,
        "dataset": dataset,
        "seeds": list(seeds),
        "mean_accuracy": agg.mean_accuracy,
        "stddev": agg.stddev,
        "convergence_index": agg.convergence_index,
        "drift_latencies": latencies,
        "memory_estimate": [r.memory[max(r.memory)] if r.memory else None for r in reports],
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
