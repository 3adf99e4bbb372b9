"""Benchmarks, segment-grouped cross-validation and metrics for the three prediction tasks.

Benchmarks stand in for human judgment:

  B1  mean TTF over all training runs, one constant for every run
  B2  mean true TTF of each evaluated segment (visionary: it peeks at the future)
  B3  ``max(0, x - elapsed)`` where x is the mean length of complete training segments

Folds never split a segment. Pooled metrics concatenate the test predictions of all folds.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from . import models
from .config import PipelineConfig
from .errors import DegenerateTarget, InvalidConfig, InvalidModelSpec, TooFewSegments, ZeroBenchmark
from .features import GROUPS, FeatureBuilder, FeatureSpec, assemble
from .ingest import EventLog, filter_recipes
from .labeling import LabeledDataset, LabeledRun, Segment, label_log
from .models import ModelSpec

logger = logging.getLogger(__name__)

TASKS = ("ttf_regression", "health_regression", "interval_classification")
BENCHMARKS = ("B1", "B2", "B3")
REPORT_VERSION = 1


@dataclass(frozen=True, slots=True)
class BenchmarkPrediction:
    kind: str
    values: np.ndarray


@dataclass(frozen=True, slots=True)
class FoldAssignment:
    folds: Mapping[str, int]
    k: int
    seed: int

    def fold_segments(self, fold: int) -> list[str]:
        return [s for s, f in self.folds.items() if f == fold]

    def sizes(self) -> list[int]:
        return [sum(1 for f in self.folds.values() if f == i) for i in range(self.k)]


# ---------------------------------------------------------------------------
# benchmarks
# ---------------------------------------------------------------------------


def _target(lr: LabeledRun, target: str) -> float:
    value = lr.ttf if target == "ttf" else lr.health
    if value is None:
        raise InvalidConfig(f"run {lr.run.run_id} in segment {lr.segment_id} has no {target} label")
    return value


def benchmark_b1(
    train_labeled: Sequence[LabeledRun], eval_runs: Sequence[LabeledRun], target: str = "ttf"
) -> BenchmarkPrediction:
    values = [_target(lr, target) for lr in train_labeled if not lr.censored]
    if not values:
        raise InvalidConfig("B1 needs at least one labeled training run")
    return BenchmarkPrediction("B1", np.full(len(eval_runs), float(np.mean(values))))


def benchmark_b2(eval_labeled: Sequence[LabeledRun], target: str = "ttf") -> BenchmarkPrediction:
    sums: dict[str, list[float]] = {}
    for lr in eval_labeled:
        sums.setdefault(lr.segment_id, []).append(_target(lr, target))
    means = {seg: float(np.mean(v)) for seg, v in sums.items()}
    return BenchmarkPrediction("B2", np.array([means[lr.segment_id] for lr in eval_labeled]))


def mean_segment_hours(train_segments: Iterable[Segment]) -> float:
    hours = [s.total_productive_hours for s in train_segments if not s.censored]
    if not hours:
        raise InvalidConfig("B3 needs at least one complete training segment")
    return float(np.mean(hours))


def benchmark_b3(
    train_segments: Sequence[Segment], eval_runs: Sequence[LabeledRun], target: str = "ttf"
) -> BenchmarkPrediction:
    """Countdown from the historic mean segment length; ``target="health"`` rescales it to [0, 1]."""
    xbar = mean_segment_hours(train_segments)
    remaining = np.maximum(0.0, xbar - np.array([lr.elapsed for lr in eval_runs], dtype=float))
    if target == "health":
        remaining = remaining / xbar
    return BenchmarkPrediction("B3", remaining)


# ---------------------------------------------------------------------------
# folds and metrics
# ---------------------------------------------------------------------------


def grouped_kfold(segments: Sequence[Segment], k: int = 4, seed: int = 42) -> FoldAssignment:
    ids = sorted(s.segment_id for s in segments if not s.censored)
    if k < 2:
        raise InvalidConfig(f"k must be >= 2 (got {k})")
    if len(ids) < k:
        raise TooFewSegments(len(ids), k)
    order = np.random.default_rng(seed).permutation(len(ids))
    folds = {ids[int(j)]: pos % k for pos, j in enumerate(order)}
    assignment = FoldAssignment(dict(sorted(folds.items())), k, seed)
    logger.info("assigned %d segments to %d folds %s", len(ids), k, assignment.sizes())
    return assignment


def rmse(pred: Sequence[float] | np.ndarray, truth: Sequence[float] | np.ndarray) -> float:
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape or p.size == 0:
        raise InvalidConfig(f"rmse needs equal, non-empty lengths (got {p.shape} and {t.shape})")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def relative_rmse(x: float, b3: float) -> float:
    """``(x - b3) / b3``; negative values improve on the benchmark."""
    if b3 == 0:
        raise ZeroBenchmark("benchmark RMSE is 0; relative RMSE undefined")
    return (x - b3) / b3


def prf1(
    pred_labels: Sequence[bool] | np.ndarray, true_labels: Sequence[bool] | np.ndarray
) -> tuple[float, float, float]:
    p = np.asarray(pred_labels, dtype=bool)
    t = np.asarray(true_labels, dtype=bool)
    if p.shape != t.shape:
        raise InvalidConfig(f"prf1 needs equal lengths (got {p.shape} and {t.shape})")
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def degradation_score(
    pred: Sequence[float] | np.ndarray, truth: Sequence[float] | np.ndarray, segment_ids: Sequence[str]
) -> float:
    """Mean within-segment Spearman correlation of prediction with truth."""
    frame = pd.DataFrame({"seg": list(segment_ids), "pred": np.asarray(pred, float), "truth": np.asarray(truth, float)})
    scores = []
    for _, block in frame.groupby("seg", sort=True):
        if len(block) < 3:
            continue
        rho = block["pred"].rank().corr(block["truth"].rank())
        scores.append(0.0 if rho is None or math.isnan(rho) else float(rho))
    return float(np.mean(scores)) if scores else 0.0


def _relative_or_none(x: float, bench: float) -> float | None:
    try:
        return relative_rmse(x, bench)
    except ZeroBenchmark:
        return None


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class ReportRow:
    kind: str
    name: str
    feature_set: str | None
    pooled: Mapping[str, Any]
    folds: tuple[Mapping[str, Any], ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "name": self.name,
            "feature_set": self.feature_set,
            "pooled": dict(self.pooled),
            "folds": [dict(f) for f in self.folds],
        }


@dataclass(frozen=True, slots=True)
class EvalReport:
    task: str
    rows: tuple[ReportRow, ...]
    folds: FoldAssignment
    bounds: tuple[float, ...] = ()
    n_runs: int = 0
    summary: Mapping[str, Any] = field(default_factory=dict)
    plot: pd.DataFrame | None = None

    def model_rows(self) -> list[ReportRow]:
        return [r for r in self.rows if r.kind == "model"]

    def benchmark(self, name: str) -> ReportRow:
        return next(r for r in self.rows if r.kind == "benchmark" and r.name == name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": REPORT_VERSION,
            "task": self.task,
            "bounds": list(self.bounds),
            "n_runs": self.n_runs,
            "k": self.folds.k,
            "seed": self.folds.seed,
            "folds": dict(self.folds.folds),
            "summary": dict(self.summary),
            "rows": [r.to_dict() for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def _bound_key(bound: float) -> str:
    return f"{bound:g}"


def _regression_metrics(pred: np.ndarray, truth: np.ndarray, segs: Sequence[str], bench: Mapping[str, float]) -> dict:
    value = rmse(pred, truth)
    return {
        "rmse": value,
        "relative_rmse": _relative_or_none(value, bench["B3"]),
        "relative_rmse_b1": _relative_or_none(value, bench["B1"]),
        "relative_rmse_b2": _relative_or_none(value, bench["B2"]),
        "degradation": degradation_score(pred, truth, segs),
    }


def _interval_metrics(pred: Mapping[float, np.ndarray], truth: Mapping[float, np.ndarray]) -> dict:
    out = {}
    for bound in truth:
        p, r, f = prf1(pred[bound], truth[bound])
        out[_bound_key(bound)] = {"precision": p, "recall": r, "f1": f}
    return {"intervals": out}


def best_useful(rows: Sequence[ReportRow], threshold: float) -> ReportRow | None:
    """Lowest pooled RMSE among model rows whose predictions show degradation."""
    useful = [r for r in rows if r.kind == "model" and r.pooled["degradation"] >= threshold]
    return min(useful, key=lambda r: r.pooled["rmse"]) if useful else None


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def prepare_dataset(log: EventLog, config: PipelineConfig) -> tuple[EventLog, LabeledDataset]:
    if config.preprocess.productive_recipes is not None:
        log = filter_recipes(log, config.preprocess.productive_recipes)
    dataset = label_log(
        log,
        config.labeling.min_segment_hours,
        config.labeling.interval_bounds,
        config.labeling.leading_segments,
    )
    return log, dataset


def _selected_segments(dataset: LabeledDataset, chambers: Sequence[str] | None) -> list[Segment]:
    segs = dataset.complete_segments()
    if chambers is not None:
        keep = set(chambers)
        segs = [s for s in segs if s.chamber_id in keep]
    return segs


def _needed_groups(feature_specs: Sequence[FeatureSpec]) -> list[str]:
    wanted = {g for spec in feature_specs for g in spec.groups}
    return [g for g in GROUPS if g in wanted]


def _fit_predict(spec: ModelSpec, Xtr, ytr: np.ndarray, Xte) -> np.ndarray:
    """Predictions for the test rows; booleans for classifiers."""
    try:
        model = models.fit(spec, Xtr, ytr)
    except DegenerateTarget:
        if spec.task != "classification" or ytr.size < 2:
            raise
        logger.warning("%s: training labels are all %s; predicting that constant", spec.label, bool(ytr[0]))
        return np.full(Xte.values.shape[0], bool(ytr[0]))
    out = models.predict(model, Xte)
    return out.labels if spec.task == "classification" else out.values


@dataclass(frozen=True, slots=True)
class FoldFit:
    """Everything fitted for one fold; only ``train_rows`` reach ``builder``."""

    fold: int
    train_rows: list[LabeledRun]
    test_rows: list[LabeledRun]
    train_segments: list[Segment]
    builder: FeatureBuilder
    train_blocks: dict[str, Any]
    test_blocks: dict[str, Any]


def fit_fold(
    log: EventLog,
    dataset: LabeledDataset,
    assignment: FoldAssignment,
    fold: int,
    config: PipelineConfig,
    groups: Sequence[str] = GROUPS,
) -> FoldFit:
    test_ids = set(assignment.fold_segments(fold))
    by_segment: dict[str, list[LabeledRun]] = {}
    for lr in dataset.runs:
        if lr.segment_id in assignment.folds:
            by_segment.setdefault(lr.segment_id, []).append(lr)
    train_rows = [lr for s, rows in by_segment.items() if s not in test_ids for lr in rows]
    test_rows = [lr for s, rows in by_segment.items() if s in test_ids for lr in rows]
    seg_index = {s.segment_id: s for s in dataset.segments}
    train_segs = [seg_index[s] for s in by_segment if s not in test_ids]

    fcfg = config.features
    builder = FeatureBuilder.fit(
        log,
        train_rows,
        config.preprocess.correlation_threshold,
        fcfg.window_runs,
        fcfg.epsilon_hours,
        fcfg.penalty_scope,
    )
    logger.info("fold %d: %d train runs, %d test runs", fold, len(train_rows), len(test_rows))
    return FoldFit(
        fold,
        train_rows,
        test_rows,
        train_segs,
        builder,
        builder.blocks(log, train_rows, groups),
        builder.blocks(log, test_rows, groups),
    )


def run_task(
    task: str,
    feature_specs: Sequence[FeatureSpec | str],
    model_specs: Sequence[ModelSpec],
    log: EventLog,
    config: PipelineConfig,
    dataset: LabeledDataset | None = None,
) -> EvalReport:
    if task not in TASKS:
        raise InvalidConfig(f"unknown task {task!r} (known: {', '.join(TASKS)})")
    wanted_task = "classification" if task == "interval_classification" else "regression"
    for spec in model_specs:
        if spec.task != wanted_task:
            raise InvalidModelSpec(f"{spec.label} is a {spec.task} model; {task} needs {wanted_task}")
    fcfg = config.features
    specs = [FeatureSpec.named(s, fcfg.window_runs) if isinstance(s, str) else s for s in feature_specs]
    if dataset is None:
        log, dataset = prepare_dataset(log, config)
    bounds = dataset.bounds if task == "interval_classification" else ()
    target = "health" if task == "health_regression" else "ttf"

    segments = _selected_segments(dataset, config.evaluation.chambers)
    assignment = grouped_kfold(segments, config.evaluation.k, config.evaluation.seed)
    groups = _needed_groups(specs)

    # row key -> list of per-fold prediction arrays
    preds: dict[tuple[str, str], list[Any]] = {}
    bench_preds: dict[str, list[np.ndarray]] = {b: [] for b in BENCHMARKS}
    test_rows_per_fold: list[list[LabeledRun]] = []

    for fold in range(assignment.k):
        fitted = fit_fold(log, dataset, assignment, fold, config, groups)
        train_rows, test_rows = fitted.train_rows, fitted.test_rows
        test_rows_per_fold.append(test_rows)

        bench_preds["B1"].append(benchmark_b1(train_rows, test_rows, target).values)
        bench_preds["B2"].append(benchmark_b2(test_rows, target).values)
        bench_preds["B3"].append(benchmark_b3(fitted.train_segments, test_rows, target).values)

        for fs in specs:
            Xtr = assemble([fitted.train_blocks[g] for g in fs.groups], train_rows)
            Xte = assemble([fitted.test_blocks[g] for g in fs.groups], test_rows)
            for spec in model_specs:
                key = (fs.name, spec.label)
                if task == "interval_classification":
                    out = {}
                    for b in bounds:
                        ytr = np.array([lr.interval_labels[b] for lr in train_rows], dtype=float)
                        out[b] = _fit_predict(spec, Xtr, ytr, Xte)
                    preds.setdefault(key, []).append(out)
                else:
                    ytr = np.array([_target(lr, target) for lr in train_rows])
                    preds.setdefault(key, []).append(_fit_predict(spec, Xtr, ytr, Xte))

    all_test = [lr for rows in test_rows_per_fold for lr in rows]
    seg_ids = [lr.segment_id for lr in all_test]
    if task == "interval_classification":
        report_rows, summary = _classification_rows(specs, model_specs, preds, bench_preds, test_rows_per_fold, bounds)
        plot = _interval_plot(report_rows, bounds)
    else:
        report_rows, summary, best = _regression_rows(
            specs, model_specs, preds, bench_preds, test_rows_per_fold, target, config.evaluation.degradation_threshold
        )
        plot = _regression_plot(all_test, seg_ids, assignment, target, preds, bench_preds, best)
    logger.info("%s: %d report rows over %d test runs", task, len(report_rows), len(all_test))
    return EvalReport(task, tuple(report_rows), assignment, tuple(bounds), len(all_test), summary, plot)


def _regression_rows(specs, model_specs, preds, bench_preds, test_rows_per_fold, target, threshold):
    truths = [np.array([_target(lr, target) for lr in rows]) for rows in test_rows_per_fold]
    segs = [[lr.segment_id for lr in rows] for rows in test_rows_per_fold]
    truth = np.concatenate(truths)
    seg_all = [s for fold in segs for s in fold]
    bench_pooled = {b: rmse(np.concatenate(v), truth) for b, v in bench_preds.items()}
    bench_fold = [{b: rmse(bench_preds[b][f], truths[f]) for b in BENCHMARKS} for f in range(len(truths))]

    rows = []
    for b in BENCHMARKS:
        pooled = np.concatenate(bench_preds[b])
        rows.append(
            ReportRow(
                "benchmark",
                b,
                None,
                _regression_metrics(pooled, truth, seg_all, bench_pooled),
                tuple(
                    _regression_metrics(bench_preds[b][f], truths[f], segs[f], bench_fold[f])
                    for f in range(len(truths))
                ),
            )
        )
    for fs in specs:
        for spec in model_specs:
            fold_preds = preds[(fs.name, spec.label)]
            rows.append(
                ReportRow(
                    "model",
                    spec.label,
                    fs.name,
                    _regression_metrics(np.concatenate(fold_preds), truth, seg_all, bench_pooled),
                    tuple(
                        _regression_metrics(fold_preds[f], truths[f], segs[f], bench_fold[f])
                        for f in range(len(truths))
                    ),
                )
            )
    model_rows = [r for r in rows if r.kind == "model"]
    best = min(model_rows, key=lambda r: r.pooled["rmse"]) if model_rows else None
    useful = best_useful(rows, threshold)
    summary = {
        "benchmark_rmse": bench_pooled,
        "best": None
        if best is None
        else {"model": best.name, "feature_set": best.feature_set, "rmse": best.pooled["rmse"]},
        "best_useful": None
        if useful is None
        else {"model": useful.name, "feature_set": useful.feature_set, "rmse": useful.pooled["rmse"]},
        "degradation_threshold": threshold,
    }
    return rows, summary, useful or best


def _classification_rows(specs, model_specs, preds, bench_preds, test_rows_per_fold, bounds):
    truths = [{b: np.array([lr.interval_labels[b] for lr in rows]) for b in bounds} for rows in test_rows_per_fold]
    truth = {b: np.concatenate([t[b] for t in truths]) for b in bounds}
    n_folds = len(truths)

    rows = []
    for name in BENCHMARKS:
        fold_labels = [{b: bench_preds[name][f] <= b for b in bounds} for f in range(n_folds)]
        pooled = {b: np.concatenate([fl[b] for fl in fold_labels]) for b in bounds}
        rows.append(
            ReportRow(
                "benchmark",
                name,
                None,
                _interval_metrics(pooled, truth),
                tuple(_interval_metrics(fold_labels[f], truths[f]) for f in range(n_folds)),
            )
        )
    for fs in specs:
        for spec in model_specs:
            fold_preds = preds[(fs.name, spec.label)]
            pooled = {b: np.concatenate([fp[b] for fp in fold_preds]) for b in bounds}
            rows.append(
                ReportRow(
                    "model",
                    spec.label,
                    fs.name,
                    _interval_metrics(pooled, truth),
                    tuple(_interval_metrics(fold_preds[f], truths[f]) for f in range(n_folds)),
                )
            )
    best = {}
    for b in bounds:
        key = _bound_key(b)
        top = max(
            (r for r in rows if r.kind == "model"),
            key=lambda r: r.pooled["intervals"][key]["f1"],
            default=None,
        )
        if top is not None:
            best[key] = {"model": top.name, "feature_set": top.feature_set, **top.pooled["intervals"][key]}
    summary = {"best_per_interval": best, "positive_rate": {_bound_key(b): float(truth[b].mean()) for b in bounds}}
    return rows, summary


def _regression_plot(all_test, seg_ids, assignment, target, preds, bench_preds, chosen) -> pd.DataFrame:
    frame = pd.DataFrame(
        {
            "index": np.arange(len(all_test)),
            "chamber": [lr.run.chamber_id for lr in all_test],
            "run": [lr.run.run_id for lr in all_test],
            "segment": seg_ids,
            "fold": [assignment.folds[s] for s in seg_ids],
            "truth": [_target(lr, target) for lr in all_test],
        }
    )
    if chosen is not None:
        frame["prediction"] = np.concatenate(preds[(chosen.feature_set, chosen.name)])
    for b in BENCHMARKS:
        frame[b] = np.concatenate(bench_preds[b])
    return frame.sort_values(["chamber", "index"], kind="stable").reset_index(drop=True)


def _interval_plot(rows: Sequence[ReportRow], bounds: Sequence[float]) -> pd.DataFrame:
    records = []
    for b in bounds:
        key = _bound_key(b)
        models_f1 = [r.pooled["intervals"][key]["f1"] for r in rows if r.kind == "model"]
        record = {"interval_hours": b, "best_model_f1": max(models_f1) if models_f1 else 0.0}
        for r in rows:
            if r.kind == "benchmark":
                record[f"{r.name}_f1"] = r.pooled["intervals"][key]["f1"]
        records.append(record)
    return pd.DataFrame(records)


# ---------------------------------------------------------------------------
# table exports
# ---------------------------------------------------------------------------


def regression_table(report: EvalReport) -> pd.DataFrame:
    """Rows feature sets, columns benchmarks then model families; cells relative RMSE against B3."""
    b1 = report.benchmark("B1").pooled["relative_rmse"]
    b2 = report.benchmark("B2").pooled["relative_rmse"]
    records: dict[str, dict[str, Any]] = {}
    for row in report.model_rows():
        rec = records.setdefault(row.feature_set, {"feature_set": row.feature_set, "B1": b1, "B2": b2})
        rec[row.name] = row.pooled["relative_rmse"]
    return pd.DataFrame(list(records.values()))


def interval_table(report: EvalReport) -> pd.DataFrame:
    """Per interval: thresholded-B3 P/R/F1 next to the best model and feature set."""
    bench = report.benchmark("B3").pooled["intervals"]
    best = report.summary.get("best_per_interval", {})
    records = []
    for b in report.bounds:
        key = _bound_key(b)
        top = best.get(key, {})
        records.append(
            {
                "interval": f"0-{key}h",
                "benchmark_precision": bench[key]["precision"],
                "benchmark_recall": bench[key]["recall"],
                "benchmark_f1": bench[key]["f1"],
                "model": top.get("model"),
                "feature_set": top.get("feature_set"),
                "precision": top.get("precision"),
                "recall": top.get("recall"),
                "f1": top.get("f1"),
            }
        )
    return pd.DataFrame(records)


def write_report(report: EvalReport, directory: str | Path) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = report.task
    paths = {"report": directory / f"{stem}.json"}
    paths["report"].write_text(report.to_json(), encoding="utf-8")
    table = interval_table(report) if report.task == "interval_classification" else regression_table(report)
    paths["table"] = directory / f"{stem}_table.csv"
    table.to_csv(paths["table"], index=False, float_format="%.6f", lineterminator="\n")
    if report.plot is not None:
        paths["plot"] = directory / f"{stem}_plot_data.csv"
        report.plot.to_csv(paths["plot"], index=False, float_format="%.6f", lineterminator="\n")
    return paths
