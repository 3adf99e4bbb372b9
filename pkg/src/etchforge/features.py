"""Degradation features and the FS1..FS7 feature-set combinations.

Feature groups, all computed per run from information at or before the run's end:

  APC_V  standardized APC sensors that carry at least one limit definition
  APC_R  recipe mix over the trailing ``window_runs`` runs of the segment
  LV_P   limit-violation counters weighted by per-code penalties
  AL_P   alarm counters weighted by per-code penalties
  DIPS   voltage-dip count and maximum magnitude over the trailing window

A code's penalty is the reciprocal of the median TTF at its training occurrences,
``AP = 1 / max(median, epsilon_hours)``; every occurrence adds ``1 + AP`` to the weighted
counter of its segment.
"""

from __future__ import annotations

import bisect
import json
import logging
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .errors import EmptySelection, InvalidConfig, UnknownFeatureSet
from .ingest import AlarmEvent, EventLog, LimitViolationEvent, VoltageDip, limit_map
from .labeling import LabeledRun
from .preprocess import FittedPreprocessor, PruneReport

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

GROUPS = ("APC_V", "APC_R", "LV_P", "AL_P", "DIPS")
FEATURE_SETS: dict[str, tuple[str, ...]] = {
    "FS1": ("APC_V", "APC_R"),
    "FS2": ("APC_V", "LV_P"),
    "FS3": ("APC_V", "APC_R", "LV_P", "AL_P"),
    "FS4": ("APC_V", "APC_R", "LV_P", "AL_P", "DIPS"),
    "FS5": ("APC_V", "LV_P", "AL_P"),
    "FS6": ("LV_P", "AL_P"),
    "FS7": ("AL_P",),
}
PENALTY_SCOPES = ("pooled", "chamber")


@dataclass(frozen=True, slots=True)
class FeatureSpec:
    name: str
    groups: tuple[str, ...]
    window_runs: int = 10

    @classmethod
    def named(cls, name: str, window_runs: int = 10) -> FeatureSpec:
        if name not in FEATURE_SETS:
            raise UnknownFeatureSet(f"unknown feature set {name!r} (known: {', '.join(FEATURE_SETS)})")
        if window_runs < 1:
            raise InvalidConfig(f"window_runs must be >= 1 (got {window_runs})")
        return cls(name, FEATURE_SETS[name], window_runs)


@dataclass(frozen=True, slots=True)
class FeatureMatrix:
    values: np.ndarray
    columns: tuple[str, ...]
    groups: Mapping[str, str]
    run_keys: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if self.values.shape != (len(self.run_keys), len(self.columns)):
            raise ValueError(
                f"matrix shape {self.values.shape} does not match "
                f"{len(self.run_keys)} rows x {len(self.columns)} columns"
            )
        if not np.isfinite(self.values).all():
            raise ValueError("feature matrix contains non-finite values")

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=list(self.columns))
        frame.insert(0, "run", [k[1] for k in self.run_keys])
        frame.insert(0, "chamber", [k[0] for k in self.run_keys])
        return frame

    def to_csv(self, path: str | Path) -> tuple[Path, Path]:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        sidecar = path.with_suffix(".provenance.json")
        sidecar.write_text(json.dumps({c: self.groups[c] for c in self.columns}, indent=2) + "\n", encoding="utf-8")
        return path, sidecar


# ---------------------------------------------------------------------------
# event -> run attachment
# ---------------------------------------------------------------------------


class _SegmentIndex:
    """Row positions of each segment, searchable by chamber and time."""

    def __init__(self, labeled: Sequence[LabeledRun]) -> None:
        rows: dict[str, list[int]] = {}
        for i, lr in enumerate(labeled):
            rows.setdefault(lr.segment_id, []).append(i)
        for seg_rows in rows.values():
            seg_rows.sort(key=lambda i: labeled[i].run.start)
        self.labeled = labeled
        self.rows = rows
        per_chamber: dict[str, list[str]] = {}
        for seg_id, seg_rows in rows.items():
            per_chamber.setdefault(labeled[seg_rows[0]].run.chamber_id, []).append(seg_id)
        self.chamber_segments = {
            c: sorted(ids, key=lambda s: labeled[rows[s][0]].run.start) for c, ids in per_chamber.items()
        }
        self.chamber_starts = {
            c: [labeled[rows[s][0]].run.start for s in ids] for c, ids in self.chamber_segments.items()
        }
        self.run_starts = {s: [labeled[i].run.start for i in seg_rows] for s, seg_rows in rows.items()}

    def locate(self, chamber_id: str, time: float) -> tuple[str, int] | None:
        starts = self.chamber_starts.get(chamber_id)
        if not starts:
            return None
        slot = bisect.bisect_right(starts, time) - 1
        if slot < 0:
            return None
        seg_id = self.chamber_segments[chamber_id][slot]
        seg_rows = self.rows[seg_id]
        if time > self.labeled[seg_rows[0]].segment_end:
            return None
        return seg_id, bisect.bisect_right(self.run_starts[seg_id], time) - 1


def attach_events(events: Iterable[Any], labeled: Sequence[LabeledRun]) -> tuple[list[tuple[Any, LabeledRun]], int]:
    """Pair each event with the latest run of its segment that started at or before it."""
    index = _SegmentIndex(labeled)
    attached = []
    outside = 0
    for event in events:
        hit = index.locate(event.chamber_id, event.time)
        if hit is None:
            outside += 1
            continue
        seg_id, pos = hit
        attached.append((event, labeled[index.rows[seg_id][pos]]))
    return attached, outside


# ---------------------------------------------------------------------------
# penalties
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class PenaltyTable:
    penalties: Mapping[str, float]
    source: str
    epsilon_hours: float = 1.0
    medians: Mapping[str, float] = field(default_factory=dict)
    counts: Mapping[str, int] = field(default_factory=dict)
    unattached: int = 0
    by_chamber: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    def penalty(self, code: str, chamber_id: str | None = None) -> float:
        if self.by_chamber:
            return self.by_chamber.get(chamber_id or "", {}).get(code, 0.0)
        return self.penalties.get(code, 0.0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "source": self.source,
            "epsilon_hours": self.epsilon_hours,
            "unattached": self.unattached,
            "codes": [
                {"code": c, "occurrences": self.counts[c], "median_ttf": self.medians[c], "penalty": self.penalties[c]}
                for c in sorted(self.penalties)
            ],
            "by_chamber": {c: dict(sorted(t.items())) for c, t in sorted(self.by_chamber.items())},
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> PenaltyTable:
        codes = obj["codes"]
        return cls(
            penalties={r["code"]: float(r["penalty"]) for r in codes},
            source=str(obj["source"]),
            epsilon_hours=float(obj["epsilon_hours"]),
            medians={r["code"]: float(r["median_ttf"]) for r in codes},
            counts={r["code"]: int(r["occurrences"]) for r in codes},
            unattached=int(obj.get("unattached", 0)),
            by_chamber={c: {k: float(v) for k, v in t.items()} for c, t in obj.get("by_chamber", {}).items()},
        )


def _median_penalties(pairs: Iterable[tuple[Any, LabeledRun]], epsilon: float) -> tuple[dict, dict, dict]:
    ttfs: dict[str, list[float]] = {}
    for event, lr in pairs:
        ttfs.setdefault(event.code, []).append(lr.ttf)
    medians = {code: float(np.median(v)) for code, v in sorted(ttfs.items())}
    penalties = {code: 1.0 / max(m, epsilon) for code, m in medians.items()}
    counts = {code: len(v) for code, v in ttfs.items()}
    return penalties, medians, counts


def fit_penalties(
    events: Iterable[AlarmEvent | LimitViolationEvent],
    labeled_runs: Sequence[LabeledRun],
    source: str = "alarm",
    epsilon_hours: float = 1.0,
    scope: str = "pooled",
) -> PenaltyTable:
    if epsilon_hours <= 0:
        raise InvalidConfig(f"epsilon_hours must be > 0 (got {epsilon_hours})")
    if scope not in PENALTY_SCOPES:
        raise InvalidConfig(f"penalty scope must be one of {PENALTY_SCOPES} (got {scope!r})")
    attached, outside = attach_events(events, labeled_runs)
    labeled = [(e, lr) for e, lr in attached if lr.ttf is not None]
    outside += len(attached) - len(labeled)
    if outside:
        logger.warning("%d %s events fall outside any labeled segment and were ignored", outside, source)
    penalties, medians, counts = _median_penalties(labeled, epsilon_hours)
    by_chamber: dict[str, dict[str, float]] = {}
    if scope == "chamber":
        for chamber in sorted({lr.run.chamber_id for _, lr in labeled}):
            own = [(e, lr) for e, lr in labeled if lr.run.chamber_id == chamber]
            by_chamber[chamber] = _median_penalties(own, epsilon_hours)[0]
    for code, ap in penalties.items():
        logger.debug("%s %s: median ttf %.3f h, penalty %.4f", source, code, medians[code], ap)
    return PenaltyTable(penalties, source, epsilon_hours, medians, counts, outside, by_chamber)


def median_report(table: PenaltyTable, events: Iterable[AlarmEvent | LimitViolationEvent] = ()) -> pd.DataFrame:
    """Per-code occurrences, median TTF and penalty, ordered by median TTF ascending."""
    labels: dict[str, Counter] = {}
    for event in events:
        tag = getattr(event, "category", None) or getattr(event, "severity", "")
        labels.setdefault(event.code, Counter())[tag] += 1
    rows = [
        {
            "code": code,
            "class": labels[code].most_common(1)[0][0] if code in labels else "",
            "occurrences": table.counts[code],
            "median_ttf": table.medians[code],
            "penalty": table.penalties[code],
        }
        for code in table.penalties
        if table.counts.get(code, 0) > 0
    ]
    frame = pd.DataFrame(rows, columns=["code", "class", "occurrences", "median_ttf", "penalty"])
    return frame.sort_values(["median_ttf", "code"], kind="stable").reset_index(drop=True)


# ---------------------------------------------------------------------------
# feature groups
# ---------------------------------------------------------------------------


def _trailing_max(values: np.ndarray, window: int) -> np.ndarray:
    padded = np.concatenate([np.zeros(window - 1), values])
    return np.lib.stride_tricks.sliding_window_view(padded, window).max(axis=1)


def counter_features(
    events: Iterable[AlarmEvent | LimitViolationEvent],
    labeled_runs: Sequence[LabeledRun],
    penalties: PenaltyTable,
    window_runs: int = 10,
    prefix: str = "al",
) -> tuple[np.ndarray, list[str]]:
    columns = [f"{prefix}_count", f"{prefix}_weighted", f"{prefix}_grad_sum", f"{prefix}_grad_max"]
    out = np.zeros((len(labeled_runs), 4))
    index = _SegmentIndex(labeled_runs)
    times: dict[str, list[float]] = {}
    weights: dict[str, list[float]] = {}
    for event in events:
        hit = index.locate(event.chamber_id, event.time)
        if hit is None:
            continue
        times.setdefault(hit[0], []).append(event.time)
        weights.setdefault(hit[0], []).append(1.0 + penalties.penalty(event.code, event.chamber_id))

    for seg_id, rows in index.rows.items():
        ends = np.array([labeled_runs[i].run.end for i in rows])
        if seg_id in times:
            order = np.argsort(times[seg_id], kind="stable")
            t = np.asarray(times[seg_id])[order]
            cum_w = np.concatenate([[0.0], np.cumsum(np.asarray(weights[seg_id])[order])])
            seen = np.searchsorted(t, ends, side="right")
            count = seen.astype(float)
            weighted = cum_w[seen]
        else:
            count = np.zeros(len(rows))
            weighted = np.zeros(len(rows))
        step = np.diff(weighted, prepend=0.0)
        lagged = np.concatenate([np.zeros(window_runs), weighted])[: len(rows)]
        out[rows, 0] = count
        out[rows, 1] = weighted
        out[rows, 2] = weighted - lagged
        out[rows, 3] = _trailing_max(step, window_runs)
    return out, columns


def recipe_mix_features(
    labeled_runs: Sequence[LabeledRun], recipes: Sequence[str], window_runs: int = 10
) -> tuple[np.ndarray, list[str]]:
    known = list(recipes)
    columns = [f"mix_{r}" for r in known] + ["mix_other", "recipe_changes"]
    col = {r: j for j, r in enumerate(known)}
    other = len(known)
    out = np.zeros((len(labeled_runs), len(columns)))
    for rows in _SegmentIndex(labeled_runs).rows.values():
        slots = [col.get(labeled_runs[i].run.recipe_id, other) for i in rows]
        for pos, i in enumerate(rows):
            window = slots[max(0, pos - window_runs + 1) : pos + 1]
            for s in window:
                out[i, s] += 1.0 / len(window)
            out[i, -1] = sum(1 for a, b in zip(window, window[1:]) if a != b)
    return out, columns


def apcv_features(
    matrix: np.ndarray, prune_report: PruneReport, limits: Mapping[str, str]
) -> tuple[np.ndarray, list[str]]:
    """Columns of the kept-sensor ``matrix`` that carry at least one limit definition."""
    limited = set(limits.values())
    pruned = sorted(limited & set(prune_report.dropped_names))
    if pruned:
        logger.warning("limit sensors removed by correlation pruning: %s", ", ".join(pruned))
    picks = [j for j, name in enumerate(prune_report.kept) if name in limited]
    if not picks:
        raise EmptySelection("no kept sensor carries a limit definition")
    return matrix[:, picks], [f"apc_{prune_report.kept[j]}" for j in picks]


def dip_features(
    dips: Iterable[VoltageDip], labeled_runs: Sequence[LabeledRun], window_runs: int = 10
) -> tuple[np.ndarray, list[str]]:
    columns = ["dip_count", "dip_max"]
    out = np.zeros((len(labeled_runs), 2))
    by_chamber: dict[str, list[VoltageDip]] = {}
    for dip in dips:
        by_chamber.setdefault(dip.chamber_id, []).append(dip)
    for seq in by_chamber.values():
        seq.sort(key=lambda d: d.time)
    chamber_times = {c: [d.time for d in seq] for c, seq in by_chamber.items()}

    for rows in _SegmentIndex(labeled_runs).rows.values():
        chamber = labeled_runs[rows[0]].run.chamber_id
        if chamber not in by_chamber:
            continue
        seq, times = by_chamber[chamber], chamber_times[chamber]
        for pos, i in enumerate(rows):
            lo = labeled_runs[rows[max(0, pos - window_runs + 1)]].run.start
            hi = labeled_runs[i].run.end
            hits = seq[bisect.bisect_left(times, lo) : bisect.bisect_right(times, hi)]
            if hits:
                out[i, 0] = len(hits)
                out[i, 1] = max(d.magnitude for d in hits)
    return out, columns


# ---------------------------------------------------------------------------
# fitted builder
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class GroupBlock:
    group: str
    values: np.ndarray
    columns: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class FeatureBuilder:
    """Everything a feature set needs, fitted on training rows only."""

    preprocessor: FittedPreprocessor
    alarm_penalties: PenaltyTable
    violation_penalties: PenaltyTable
    recipes: tuple[str, ...]
    limits: Mapping[str, str]
    window_runs: int = 10

    @classmethod
    def fit(
        cls,
        log: EventLog,
        train_runs: Sequence[LabeledRun],
        correlation_threshold: float = 0.95,
        window_runs: int = 10,
        epsilon_hours: float = 1.0,
        penalty_scope: str = "pooled",
    ) -> FeatureBuilder:
        if window_runs < 1:
            raise InvalidConfig(f"window_runs must be >= 1 (got {window_runs})")
        runs = [lr.run for lr in train_runs]
        attached, _ = attach_events(log.violations, train_runs)
        return cls(
            preprocessor=FittedPreprocessor.fit(runs, correlation_threshold),
            alarm_penalties=fit_penalties(log.alarms, train_runs, "alarm", epsilon_hours, penalty_scope),
            violation_penalties=fit_penalties(log.violations, train_runs, "violation", epsilon_hours, penalty_scope),
            recipes=tuple(sorted({r.recipe_id for r in runs})),
            limits=limit_map(e for e, _ in attached),
            window_runs=window_runs,
        )

    def block(self, group: str, log: EventLog, labeled_runs: Sequence[LabeledRun]) -> GroupBlock:
        w = self.window_runs
        if group == "APC_V":
            matrix = self.preprocessor.transform([lr.run for lr in labeled_runs])
            values, cols = apcv_features(matrix, self.preprocessor.prune, self.limits)
        elif group == "APC_R":
            values, cols = recipe_mix_features(labeled_runs, self.recipes, w)
        elif group == "LV_P":
            values, cols = counter_features(log.violations, labeled_runs, self.violation_penalties, w, "lv")
        elif group == "AL_P":
            values, cols = counter_features(log.alarms, labeled_runs, self.alarm_penalties, w, "al")
        elif group == "DIPS":
            values, cols = dip_features(log.dips, labeled_runs, w)
        else:
            raise UnknownFeatureSet(f"unknown feature group {group!r}")
        return GroupBlock(group, values, tuple(cols))

    def blocks(
        self, log: EventLog, labeled_runs: Sequence[LabeledRun], groups: Iterable[str] = GROUPS
    ) -> dict[str, GroupBlock]:
        return {g: self.block(g, log, labeled_runs) for g in groups}

    def materialize(
        self,
        spec: FeatureSpec | str,
        log: EventLog,
        labeled_runs: Sequence[LabeledRun],
        cache: Mapping[str, GroupBlock] | None = None,
    ) -> FeatureMatrix:
        if isinstance(spec, str):
            spec = FeatureSpec.named(spec, self.window_runs)
        cache = cache or {}
        parts = [cache[g] if g in cache else self.block(g, log, labeled_runs) for g in spec.groups]
        return assemble(parts, labeled_runs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "window_runs": self.window_runs,
            "recipes": list(self.recipes),
            "limits": dict(sorted(self.limits.items())),
            "preprocessor": self.preprocessor.to_dict(),
            "alarm_penalties": self.alarm_penalties.to_dict(),
            "violation_penalties": self.violation_penalties.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> FeatureBuilder:
        return cls(
            preprocessor=FittedPreprocessor.from_dict(obj["preprocessor"]),
            alarm_penalties=PenaltyTable.from_dict(obj["alarm_penalties"]),
            violation_penalties=PenaltyTable.from_dict(obj["violation_penalties"]),
            recipes=tuple(obj["recipes"]),
            limits=dict(obj["limits"]),
            window_runs=int(obj["window_runs"]),
        )


def assemble(parts: Sequence[GroupBlock], labeled_runs: Sequence[LabeledRun]) -> FeatureMatrix:
    keys = tuple(lr.key for lr in labeled_runs)
    if not parts:
        return FeatureMatrix(np.zeros((len(keys), 0)), (), {}, keys)
    values = np.hstack([p.values for p in parts])
    columns = tuple(c for p in parts for c in p.columns)
    groups = {c: p.group for p in parts for c in p.columns}
    return FeatureMatrix(values, columns, groups, keys)


def materialize(
    spec: FeatureSpec | str, builder: FeatureBuilder, log: EventLog, labeled_runs: Sequence[LabeledRun]
) -> FeatureMatrix:
    return builder.materialize(spec, log, labeled_runs)
