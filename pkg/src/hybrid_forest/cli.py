"""Command-line experiment runner.

    hybrid-forest run --generator waveform --count 5000 --model hybrid --seeds 20 --out runs/
    hybrid-forest sweep --generator waveform --d-values 0.2,0.6 --k-values 15,100 --out sweep/
    hybrid-forest confidence --n 10:100:10 --m 1:100

Exit codes: 0 success, 2 bad configuration, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional

from .core import ConfigError, RunConfig, ValidationError
from .eval import MetricConfig, dumps, run_prequential, summary_document
from .forest import build_model, confidence, min_learners_for_confidence, UnreachableTarget
from .streams import (DriftSpec, StreamError, generate_dominant_regression, generate_waveform, inject_drift,
                      load_arff, load_csv, swap_classes)

log = logging.getLogger("hybrid_forest")

EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 2, 3, 4
GENERATORS = {"waveform": generate_waveform, "dominant": generate_dominant_regression}
_DEFAULTS = RunConfig()
_METRIC_DEFAULTS = MetricConfig()


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def write_atomic(path: str, text: str) -> None:
    """Write ``text`` to a temp file beside ``path`` and rename it into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _int_list(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _float_list(text: str) -> List[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _seeds(text: str) -> List[int]:
    """``N`` means seeds 0..N-1; a comma list is taken literally."""
    text = str(text)
    if "," in text:
        return _int_list(text)
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("need at least one seed")
    return list(range(n))


def _m(text: str):
    return None if str(text) == "auto" else int(text)


def _add_experiment_args(p: argparse.ArgumentParser) -> None:
    src = p.add_argument_group("dataset (exactly one of --csv, --arff, --generator)")
    src.add_argument("--csv", help="headered CSV file")
    src.add_argument("--arff", help="dense ARFF file")
    src.add_argument("--generator", choices=sorted(GENERATORS), help="synthetic stream")
    src.add_argument("--count", type=int, default=5000, help="generator length (default: %(default)s)")
    src.add_argument("--task", choices=("classification", "regression"), default=None,
                     help="CSV task (default: regression for CSV; ARFF/generators know their task)")
    src.add_argument("--target", default=None, help="target column/attribute (default: last)")
    src.add_argument("--nominal", default="", help="comma list of nominal CSV columns")
    src.add_argument("--fixed-stream", action="store_true",
                     help="replay the generator stream of seed 0 for every run seed")

    mod = p.add_argument_group("model")
    mod.add_argument("--model", choices=("single", "rf", "hybrid"), default="hybrid",
                     help="learner (default: %(default)s)")
    mod.add_argument("--m", type=_m, default=_DEFAULTS.weak_learner_count,
                     help="weak learners; 'auto' picks the smallest m with 0.99 feature coverage (default: auto)")
    mod.add_argument("--d", type=float, default=_DEFAULTS.d_hybrid_impact, help="hybrid impact (default: %(default)s)")
    mod.add_argument("--k", type=int, default=_DEFAULTS.k_window_size, help="window size (default: %(default)s)")
    mod.add_argument("--delta", type=float, default=_DEFAULTS.delta, help="split confidence (default: %(default)s)")
    mod.add_argument("--grace", type=int, default=_DEFAULTS.grace_period, help="grace period (default: %(default)s)")
    mod.add_argument("--tie", type=float, default=_DEFAULTS.tie_threshold, help="tie threshold (default: %(default)s)")
    mod.add_argument("--tol", type=float, default=_DEFAULTS.regression_correctness_tolerance,
                     help="relative tolerance for a correct regression output (default: %(default)s)")
    mod.add_argument("--drift-threshold", type=float, default=_DEFAULTS.drift_threshold,
                     help="disagreement fraction that flags drift (default: %(default)s)")

    ev = p.add_argument_group("evaluation")
    ev.add_argument("--drift", default=None, help="inject drift: abrupt:IDX or gradual:START:END")
    ev.add_argument("--seeds", type=_seeds, default=[0], help="seed count N (0..N-1) or comma list (default: 1)")
    ev.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    ev.add_argument("--wmetric", type=int, default=_METRIC_DEFAULTS.w_metric,
                    help="rolling accuracy window (default: %(default)s)")
    ev.add_argument("--threshold", type=float, default=_METRIC_DEFAULTS.threshold,
                    help="convergence accuracy threshold (default: %(default)s)")
    ev.add_argument("--stride", type=int, default=_METRIC_DEFAULTS.memory_stride,
                    help="memory snapshot stride in samples (default: %(default)s)")
    ev.add_argument("--workers", type=int, default=1, help="worker processes (default: %(default)s)")
    p.add_argument("--config", help="key=value file; command-line flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybrid-forest", description="Streaming Hoeffding tree experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="prequential run over one or more seeds")
    _add_experiment_args(run)
    sweep = sub.add_parser("sweep", help="grid of hybrid impact d x window size k")
    _add_experiment_args(sweep)
    sweep.add_argument("--d-values", type=_float_list, default=None, help="comma list of d values")
    sweep.add_argument("--k-values", type=_int_list, default=None, help="comma list of k values")
    conf = sub.add_parser("confidence", help="feature-coverage confidence table or minimal learner count")
    conf.add_argument("--n", required=True, help="feature count N or range START:STOP[:STEP] (inclusive)")
    conf.add_argument("--m", default=None, help="learner count M or range START:STOP[:STEP] (inclusive)")
    conf.add_argument("--target", type=float, default=None, help="report the smallest m reaching this confidence")
    return parser


def _load_config_file(path: str) -> List[str]:
    """Turn ``key = value`` lines into flag tokens."""
    tokens = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{line_no}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            flag = "--" + key.replace("_", "-")
            if key.replace("-", "_") == "fixed_stream":
                if value.lower() in ("1", "true", "yes"):
                    tokens.append(flag)
            else:
                tokens.extend([flag, value])
    return tokens


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            tokens = _load_config_file(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        # file values go first so explicit flags override them
        args = parser.parse_args([argv[0], *tokens, *argv[1:]])
    return args


@dataclass(frozen=True)
class ExperimentConfig:
    csv: Optional[str]
    arff: Optional[str]
    generator: Optional[str]
    count: int
    task: Optional[str]
    target: Optional[str]
    nominal: tuple
    fixed_stream: bool
    model: str
    run: RunConfig
    metric: MetricConfig
    drift: Optional[str]
    seeds: tuple
    out: str

    @property
    def dataset_name(self) -> str:
        if self.generator:
            return self.generator
        return os.path.basename(self.csv or self.arff)


def experiment_config(args) -> ExperimentConfig:
    chosen = [x for x in (args.csv, args.arff, args.generator) if x]
    if len(chosen) != 1:
        raise UsageError("give exactly one of --csv, --arff, --generator")
    if not args.seeds:
        raise UsageError("seed list is empty")
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    try:
        run = RunConfig(delta=args.delta, grace_period=args.grace, tie_threshold=args.tie, weak_learner_count=args.m,
                        d_hybrid_impact=args.d, k_window_size=args.k, regression_correctness_tolerance=args.tol,
                        drift_threshold=args.drift_threshold)
        metric = MetricConfig(w_metric=args.wmetric, threshold=args.threshold, tolerance=args.tol,
                              repeats=len(args.seeds), memory_stride=args.stride)
    except (ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if args.drift:
        try:
            DriftSpec.parse(args.drift)
        except (ValueError, StreamError) as exc:
            raise UsageError(str(exc)) from None
    nominal = tuple(s.strip() for s in args.nominal.split(",") if s.strip())
    return ExperimentConfig(args.csv, args.arff, args.generator, args.count, args.task, args.target, nominal,
                            args.fixed_stream, args.model, run, metric, args.drift, tuple(args.seeds), args.out)


def open_stream(cfg: ExperimentConfig, seed: int):
    if cfg.csv:
        source = load_csv(cfg.csv, task=cfg.task or "regression", target=cfg.target, nominal=cfg.nominal)
    elif cfg.arff:
        source = load_arff(cfg.arff, target=cfg.target)
    else:
        source = GENERATORS[cfg.generator](cfg.count, 0 if cfg.fixed_stream else seed)
    if cfg.drift:
        schema = source.schema
        if schema.is_classification:
            spec = DriftSpec.parse(cfg.drift, class_permutation=swap_classes(schema.class_count))
        else:
            spec = DriftSpec.parse(cfg.drift, feature_permutation=_reversal(schema))
        source = inject_drift(source, spec, seed)
    return source


def _reversal(schema):
    perm = tuple(reversed(range(schema.n_features)))
    if [schema.features[i].kind for i in perm] != [f.kind for f in schema.features]:
        raise UsageError("regression drift reverses feature order and needs features of one kind")
    return perm


def drift_spec(cfg: ExperimentConfig):
    return DriftSpec.parse(cfg.drift) if cfg.drift else None


def _run_seed(cfg: ExperimentConfig, seed: int):
    source = open_stream(cfg, seed)
    model = build_model(cfg.model, source.schema, replace(cfg.run, rng_seed=seed))
    return run_prequential(model, source, cfg.metric, method=cfg.model, seed=seed)


def execute(cfg: ExperimentConfig, workers: int = 1, out: Optional[str] = None) -> dict:
    """Run every seed, write per-seed traces and summaries plus the aggregate."""
    out = out or cfg.out
    if workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(workers) as pool:
            reports = list(pool.map(_run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        reports = [_run_seed(cfg, s) for s in cfg.seeds]
    bad = [r for r in reports if not r.complete]
    if bad:
        raise DataError(f"seed {bad[0].seed}: {bad[0].error}")
    threshold = cfg.metric.threshold
    for r in reports:
        stem = f"{cfg.model}_seed{r.seed}"
        write_atomic(os.path.join(out, f"trace_{stem}.csv"), r.to_csv())
        doc = r.summary(threshold)
        doc["dataset"] = cfg.dataset_name
        write_atomic(os.path.join(out, f"summary_{stem}.json"), dumps(doc))
    if not reports[0].correct:
        aggregate = {"method": cfg.model, "dataset": cfg.dataset_name, "seeds": list(cfg.seeds),
                     "mean_accuracy": None, "stddev": None, "convergence_index": None, "drift_latencies": [],
                     "memory_estimate": [], "undefined": True}
    else:
        aggregate = summary_document(cfg.model, cfg.dataset_name, cfg.seeds, reports, threshold, drift_spec(cfg))
    write_atomic(os.path.join(out, f"aggregate_{cfg.model}.json"), dumps(aggregate))
    return aggregate


def cmd_run(args) -> int:
    cfg = experiment_config(args)
    aggregate = execute(cfg, args.workers)
    print(json.dumps({k: aggregate[k] for k in ("method", "dataset", "mean_accuracy", "stddev",
                                                 "convergence_index")}))
    return 0


def cmd_sweep(args) -> int:
    cfg = experiment_config(args)
    d_values = args.d_values or [cfg.run.d_hybrid_impact]
    k_values = args.k_values or [cfg.run.k_window_size]
    rows = []
    for d in d_values:
        for k in k_values:
            try:
                cell = replace(cfg, run=replace(cfg.run, d_hybrid_impact=d, k_window_size=k))
            except ConfigError as exc:
                raise UsageError(str(exc)) from None
            out = os.path.join(cfg.out, f"d{d:g}_k{k}")
            agg = execute(cell, args.workers, out)
            rows.append((d, k, agg["mean_accuracy"], agg["stddev"], agg["convergence_index"]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("d", "k", "mean_acc", "stddev", "convergence_index"))
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    write_atomic(os.path.join(cfg.out, "sweep.csv"), buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return 0


def _range(text: str, lowest: int) -> List[int]:
    parts = [int(p) for p in text.split(":")]
    if len(parts) == 1:
        values = parts
    elif len(parts) in (2, 3):
        step = parts[2] if len(parts) == 3 else 1
        if step < 1:
            raise UsageError("range step must be positive")
        values = list(range(parts[0], parts[1] + 1, step))
    else:
        raise UsageError(f"bad range {text!r}")
    if not values or min(values) < lowest:
        raise UsageError(f"values in {text!r} must be >= {lowest}")
    return values


def cmd_confidence(args) -> int:
    try:
        ns = _range(args.n, 1)
    except ValueError:
        raise UsageError(f"bad --n {args.n!r}") from None
    if args.target is not None:
        if args.m is not None:
            raise UsageError("give either --m or --target")
        if not 0.0 < args.target < 1.0:
            raise UsageError("--target must lie in (0, 1)")
        for n in ns:
            if n < 2:
                raise UsageError("--target needs n >= 2")
        out = ["n,target,min_m"] + [f"{n},{args.target!r},{min_learners_for_confidence(n, args.target)}" for n in ns]
        print("\n".join(out))
        return 0
    try:
        ms = _range(args.m or "1", 0)
    except ValueError:
        raise UsageError(f"bad --m {args.m!r}") from None
    if len(ns) == 1 and len(ms) == 1:
        print(repr(confidence(ns[0], ms[0])))
        return 0
    lines = ["n,m,confidence"]
    lines += [f"{n},{m},{confidence(n, m)!r}" for n in ns for m in ms]
    print("\n".join(lines))
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "confidence": cmd_confidence}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (UsageError, UnreachableTarget) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        log.error("no such file: %s", exc.filename or exc)
        return EXIT_DATA
    except (DataError, StreamError, ValidationError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except Exception as exc:
        log.error("internal error: %s: %s", type(exc).__name__, exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
