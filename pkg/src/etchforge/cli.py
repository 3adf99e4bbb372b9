"""Stage-wise command line.

  etchforge simulate  --seed 42 --out data/sim
  etchforge validate  --in data/sim
  etchforge label     --in data/sim --out out/labels
  etchforge penalties --in data/sim --labels out/labels --out out/penalties
  etchforge features  --in data/sim --labels out/labels --out out/features
  etchforge train     --in data/sim --labels out/labels --out out/model --task ttf --feature-set FS3 --family RF
  etchforge evaluate  --in data/sim --labels out/labels --out out/eval --task interval --bounds 8,16,24

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any

from . import __version__
from .artifacts import hash_files, read_manifest, verify_inputs, verify_outputs, write_json, write_manifest
from .config import PipelineConfig, apply_overrides, load_config
from .errors import EtchforgeError, InvalidModelSpec
from .evalbench import prepare_dataset, run_task, write_report
from .features import FEATURE_SETS, FeatureBuilder, FeatureSpec, median_report
from .ingest import STREAM_FILES, parse_event_log, validate, write_event_log
from .labeling import (
    LABELED_FILE,
    SEGMENTS_FILE,
    LabeledDataset,
    compute_interval_labels,
    load_labeled,
    save_labeled,
)
from .models import ModelSpec, fit, model_to_dict
from .preprocess import missing_rate
from .sim import simulate

logger = logging.getLogger(__name__)

TASK_ALIASES = {
    "ttf": "ttf_regression",
    "health": "health_regression",
    "interval": "interval_classification",
}


def _print_summary(title: str, values: dict[str, Any]) -> None:
    print(title)
    for key, value in values.items():
        print(f"  {key}: {value}")


def _ranged(kind: type, low: float, high: float | None = None, open_low: bool = False):
    """argparse ``type=`` callable that rejects values outside [low, high] as usage errors."""

    def parse(text: str):
        try:
            value = kind(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"expected {kind.__name__} (got {text!r})") from exc
        too_low = value <= low if open_low else value < low
        if too_low or (high is not None and value > high):
            bracket = "(" if open_low else "["
            upper = "inf)" if high is None else f"{high}]"
            raise argparse.ArgumentTypeError(f"{text} is outside {bracket}{low}, {upper}")
        return value

    parse.__name__ = kind.__name__
    return parse


_non_negative_int = _ranged(int, 0)
_positive_int = _ranged(int, 1)
_positive_float = _ranged(float, 0.0, open_low=True)
_non_negative_float = _ranged(float, 0.0)
_unit_threshold = _ranged(float, 0.0, 1.0, open_low=True)


def _bounds(text: str) -> tuple[float, ...]:
    try:
        bounds = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bounds must be comma-separated hours (got {text!r})") from exc
    if not bounds or any(b <= 0 for b in bounds):
        raise argparse.ArgumentTypeError(f"bounds must be positive hours (got {text!r})")
    return bounds


def _config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config)
    config = apply_overrides(
        config,
        "labeling",
        {
            "min_segment_hours": getattr(args, "min_segment_hours", None),
            "interval_bounds": getattr(args, "bounds", None),
            "leading_segments": getattr(args, "leading_segments", None),
        },
    )
    config = apply_overrides(config, "preprocess", {"correlation_threshold": getattr(args, "threshold", None)})
    config = apply_overrides(
        config,
        "features",
        {"window_runs": getattr(args, "window_runs", None), "feature_sets": getattr(args, "feature_sets", None)},
    )
    return config


def _event_inputs(in_dir: Path) -> list[Path]:
    return [in_dir / name for name in STREAM_FILES.values() if (in_dir / name).exists()]


def _inputs(args: argparse.Namespace) -> dict[str, str]:
    return hash_files(_event_inputs(Path(args.in_dir)))


def _load_labels(args: argparse.Namespace, stage: str) -> tuple[Any, LabeledDataset]:
    in_dir = Path(args.in_dir)
    labels_dir = Path(args.labels)
    manifest = read_manifest(labels_dir)
    verify_inputs(manifest, in_dir, stage)
    verify_outputs(manifest, labels_dir, stage, (LABELED_FILE, SEGMENTS_FILE))
    log = parse_event_log(in_dir)
    return log, load_labeled(labels_dir, log)


def _training_rows(dataset: LabeledDataset) -> list:
    return dataset.complete_runs()


def _builder(config: PipelineConfig, log, dataset: LabeledDataset) -> FeatureBuilder:
    f = config.features
    threshold = config.preprocess.correlation_threshold
    return FeatureBuilder.fit(
        log, _training_rows(dataset), threshold, f.window_runs, f.epsilon_hours, f.penalty_scope
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _config(args)
    overrides = {"seed": args.seed, "n_chambers": args.chambers, "horizon_hours": args.horizon}
    sim = apply_overrides(config, "sim", overrides).sim
    log = simulate(sim)
    out = Path(args.out)
    written = write_event_log(log, out)
    write_manifest(out, "simulate", {"sim": sim.to_dict()}, {}, written.values())
    _print_summary(
        f"simulated event log -> {out}",
        {
            "chambers": len(log.chambers()),
            "runs": len(log.runs),
            "alarms": len(log.alarms),
            "violations": len(log.violations),
            "breakdowns": sum(len(v) for v in log.breakdown_times().values()),
            "dips": len(log.dips),
        },
    )
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    log = parse_event_log(args.in_dir)
    issues = validate(log)
    if args.out:
        write_json(args.out, [i.to_dict() for i in issues])
    _print_summary(
        f"validated {args.in_dir}",
        {"runs": len(log.runs), "issues": len(issues), "missing_rate": round(missing_rate(log.runs), 4)},
    )
    for issue in issues[: args.show]:
        print(f"  - {issue.kind} {issue.chamber_id} @ {issue.time:.3f}: {issue.detail}")
    return 1 if issues else 0


def cmd_label(args: argparse.Namespace) -> int:
    config = _config(args)
    in_dir = Path(args.in_dir)
    out = Path(args.out)
    log = parse_event_log(in_dir)
    _, dataset = prepare_dataset(log, config)
    written = save_labeled(dataset, out)
    report = write_json(
        out / "cleaning_report.json",
        {
            "min_segment_hours": config.labeling.min_segment_hours,
            "removed": [s.to_dict() for s in dataset.removed],
        },
    )
    write_manifest(
        out,
        "label",
        {"labeling": config.to_dict()["labeling"], "preprocess": config.to_dict()["preprocess"]},
        _inputs(args),
        [*written.values(), report],
    )
    _print_summary(
        f"labeled {in_dir} -> {out}",
        {
            "segments": len(dataset.segments),
            "complete_segments": len(dataset.complete_segments()),
            "removed_short_segments": len(dataset.removed),
            "labeled_runs": len(dataset.complete_runs()),
            "censored_runs": len(dataset.runs) - len(dataset.complete_runs()),
        },
    )
    return 0


def cmd_report_medians(args: argparse.Namespace) -> int:
    config = _config(args)
    log, dataset = _load_labels(args, "penalties")
    builder = _builder(config, log, dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    alarm_csv = out / "alarm_medians.csv"
    violation_csv = out / "violation_medians.csv"
    for table, events, path in (
        (builder.alarm_penalties, log.alarms, alarm_csv),
        (builder.violation_penalties, log.violations, violation_csv),
    ):
        median_report(table, events).to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
    tables = write_json(
        out / "penalties.json",
        {"alarms": builder.alarm_penalties.to_dict(), "violations": builder.violation_penalties.to_dict()},
    )
    outputs = [alarm_csv, violation_csv, tables]
    write_manifest(out, "penalties", {"features": config.to_dict()["features"]}, _inputs(args), outputs)
    _print_summary(
        f"median-TTF report -> {out}",
        {
            "alarm_codes": len(builder.alarm_penalties.penalties),
            "violation_codes": len(builder.violation_penalties.penalties),
            "unattached_alarms": builder.alarm_penalties.unattached,
            "unattached_violations": builder.violation_penalties.unattached,
        },
    )
    return 0


def cmd_features(args: argparse.Namespace) -> int:
    config = _config(args)
    log, dataset = _load_labels(args, "features")
    builder = _builder(config, log, dataset)
    rows = _training_rows(dataset)
    out = Path(args.out)
    written: list[Path] = []
    groups = sorted({g for n in config.features.feature_sets for g in FEATURE_SETS[n]})
    cache = builder.blocks(log, rows, groups)
    for name in config.features.feature_sets:
        matrix = builder.materialize(FeatureSpec.named(name, config.features.window_runs), log, rows, cache)
        written.extend(matrix.to_csv(out / f"{name}.csv"))
    written.append(write_json(out / "feature_state.json", builder.to_dict()))
    written.append(write_json(out / "prune_report.json", builder.preprocessor.prune.to_dict()))
    write_manifest(out, "features", {"features": config.to_dict()["features"]}, _inputs(args), written)
    _print_summary(
        f"feature matrices -> {out}",
        {
            "rows": len(rows),
            "feature_sets": ",".join(config.features.feature_sets),
            "kept_sensors": len(builder.preprocessor.kept),
            "dropped_sensors": len(builder.preprocessor.prune.dropped),
        },
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _config(args)
    task = TASK_ALIASES[args.task]
    if task == "interval_classification" and args.bound is None:
        raise InvalidModelSpec("train --task interval needs --bound HOURS")
    log, dataset = _load_labels(args, "train")
    if args.bound is not None:
        relabeled = tuple(compute_interval_labels(dataset.runs, [args.bound]))
        dataset = replace(dataset, runs=relabeled, bounds=(args.bound,))
    builder = _builder(config, log, dataset)
    rows = _training_rows(dataset)
    matrix = builder.materialize(FeatureSpec.named(args.feature_set, config.features.window_runs), log, rows)
    if task == "interval_classification":
        y = [float(lr.interval_labels[args.bound]) for lr in rows]
        spec = ModelSpec(args.family, "classification", seed=args.seed)
    else:
        y = [lr.ttf if task == "ttf_regression" else lr.health for lr in rows]
        spec = ModelSpec(args.family, "regression", seed=args.seed)
    model = fit(spec, matrix, y)
    out = Path(args.out)
    written = [
        write_json(
            out / "model.json",
            {"task": task, "feature_set": args.feature_set, "bound": args.bound, **model_to_dict(model)},
        ),
        write_json(out / "feature_state.json", builder.to_dict()),
    ]
    recorded = {"task": task, "family": args.family, "feature_set": args.feature_set, "bound": args.bound}
    write_manifest(out, "train", recorded, _inputs(args), written)
    _print_summary(
        f"trained {spec.label} on {args.feature_set} -> {out}",
        {"task": task, "rows": len(rows), "columns": len(matrix.columns)},
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _config(args)
    log, dataset = _load_labels(args, "evaluate")
    tasks = list(config.evaluation.tasks) if args.task == "all" else [TASK_ALIASES[args.task]]
    if "interval_classification" in tasks and args.bounds is not None:
        bounds = config.labeling.interval_bounds
        dataset = replace(dataset, runs=tuple(compute_interval_labels(dataset.runs, bounds)), bounds=bounds)
    if args.families:
        wanted = set(args.families)
        grid = replace(
            config.models,
            regression=tuple(s for s in config.models.regression if s.family in wanted),
            classification=tuple(s for s in config.models.classification if s.family in wanted),
        )
        config = replace(config, models=grid)
    out = Path(args.out)
    written: list[Path] = []
    for task in tasks:
        specs = config.models.classification if task == "interval_classification" else config.models.regression
        report = run_task(task, config.features.feature_sets, specs, log, config, dataset=dataset)
        written.extend(write_report(report, out).values())
        summary = {"rows": len(report.rows), "test_runs": report.n_runs}
        if task == "interval_classification":
            for key, best in report.summary["best_per_interval"].items():
                summary[f"0-{key}h"] = f"{best['model']}/{best['feature_set']} F1={best['f1']:.3f}"
        else:
            summary["B3_rmse"] = f"{report.summary['benchmark_rmse']['B3']:.3f}"
            best = report.summary["best_useful"] or report.summary["best"]
            if best:
                summary["best"] = f"{best['model']}/{best['feature_set']} rmse={best['rmse']:.3f}"
        _print_summary(f"{task} -> {out}", summary)
    write_manifest(out, "evaluate", config.to_dict(), _inputs(args), written)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="etchforge", description="Time-to-failure pipeline for etch chamber event logs")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = ap.add_subparsers(dest="command", required=True)

    def stage(name: str, help_text: str, needs_labels: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON, TOML or YAML pipeline config")
        if name != "simulate":
            p.add_argument("--in", dest="in_dir", required=True, help="event-log directory")
        if needs_labels:
            p.add_argument("--labels", required=True, help="directory written by `etchforge label`")
        return p

    p = stage("simulate", "generate a synthetic event log", needs_labels=False)
    p.add_argument("--seed", type=_non_negative_int, default=None)
    p.add_argument("--chambers", type=_positive_int, default=None)
    p.add_argument("--horizon", type=_positive_float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = stage("validate", "report structural issues of an event log", needs_labels=False)
    p.add_argument("--out", default=None, help="optional JSON file for the issue list")
    p.add_argument("--show", type=_non_negative_int, default=20)
    p.set_defaults(func=cmd_validate)

    p = stage("label", "derive TTF, health and interval labels", needs_labels=False)
    p.add_argument("--out", required=True)
    p.add_argument("--min-segment-hours", type=_non_negative_float, default=None)
    p.add_argument("--bounds", type=_bounds, default=None)
    p.add_argument("--leading-segments", choices=["censor", "label"], default=None)
    p.set_defaults(func=cmd_label)

    p = stage("penalties", "median TTF and penalty per alarm and violation code")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report_medians)

    p = stage("features", "export feature matrices for the labeled runs")
    p.add_argument("--out", required=True)
    p.add_argument("--feature-sets", nargs="+", choices=list(FEATURE_SETS), default=None)
    p.add_argument("--window-runs", type=_positive_int, default=None)
    p.add_argument("--threshold", type=_unit_threshold, default=None, help="correlation pruning threshold")
    p.set_defaults(func=cmd_features)

    p = stage("train", "fit one model on all labeled runs")
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=list(TASK_ALIASES), required=True)
    p.add_argument("--feature-set", choices=list(FEATURE_SETS), required=True)
    p.add_argument("--family", required=True)
    p.add_argument("--bound", type=_positive_float, default=None, help="interval bound in hours for --task interval")
    p.add_argument("--seed", type=_non_negative_int, default=42)
    p.set_defaults(func=cmd_train)

    p = stage("evaluate", "cross-validate models against the benchmarks")
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=[*TASK_ALIASES, "all"], default="all")
    p.add_argument("--bounds", type=_bounds, default=None)
    p.add_argument("--feature-sets", nargs="+", choices=list(FEATURE_SETS), default=None)
    p.add_argument("--families", nargs="+", default=None)
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (EtchforgeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
