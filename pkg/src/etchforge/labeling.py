"""Time-to-failure labels reconstructed from run durations and recorded breakdowns.

A segment is the span of runs between two consecutive breakdowns of one chamber. A run
belongs to the segment of the first breakdown that occurs after the run starts. Inside a
segment that ends in an observed breakdown:

    ttf(r_i)     = sum of durations of r_{i+1} .. r_n          (0 for the last run)
    health(r_i)  = ttf(r_i) / max ttf in the segment
    elapsed(r_i) = sum of durations of r_1 .. r_i

Segments whose ending breakdown is unobserved (trailing) or whose start is unobserved
(leading, under the default policy) are censored and carry no supervised labels.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .errors import EmptyResult, InvalidConfig, MalformedRecord, MissingFile
from .ingest import EventLog, Run

logger = logging.getLogger(__name__)

DEFAULT_BOUNDS: tuple[float, ...] = (8.0, 16.0, 24.0, 48.0, 72.0, 96.0, 120.0, 144.0, 168.0, 336.0)
LEADING_POLICIES = ("censor", "label")

LABELED_FILE = "labeled.jsonl"
SEGMENTS_FILE = "segments.jsonl"


@dataclass(frozen=True, slots=True)
class Segment:
    segment_id: str
    chamber_id: str
    start: float
    breakdown_time: float | None
    total_productive_hours: float
    censored: bool
    n_runs: int

    @property
    def end(self) -> float:
        return math.inf if self.breakdown_time is None else self.breakdown_time

    def to_dict(self) -> dict[str, Any]:
        return {
            "segment": self.segment_id,
            "chamber": self.chamber_id,
            "start": self.start,
            "breakdown": self.breakdown_time,
            "hours": self.total_productive_hours,
            "censored": self.censored,
            "runs": self.n_runs,
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> Segment:
        return cls(
            segment_id=str(obj["segment"]),
            chamber_id=str(obj["chamber"]),
            start=float(obj["start"]),
            breakdown_time=None if obj["breakdown"] is None else float(obj["breakdown"]),
            total_productive_hours=float(obj["hours"]),
            censored=bool(obj["censored"]),
            n_runs=int(obj["runs"]),
        )


@dataclass(frozen=True, slots=True)
class LabeledRun:
    run: Run
    segment_id: str
    censored: bool
    elapsed: float
    segment_end: float
    ttf: float | None = None
    health: float | None = None
    interval_labels: Mapping[float, bool] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, str]:
        return self.run.key


@dataclass(frozen=True, slots=True)
class LabeledDataset:
    runs: tuple[LabeledRun, ...]
    segments: tuple[Segment, ...]
    bounds: tuple[float, ...] = DEFAULT_BOUNDS
    removed: tuple[Segment, ...] = ()

    def complete_runs(self) -> list[LabeledRun]:
        return [lr for lr in self.runs if not lr.censored]

    def complete_segments(self) -> list[Segment]:
        return [s for s in self.segments if not s.censored]


# ---------------------------------------------------------------------------
# segmentation and labels
# ---------------------------------------------------------------------------


def segment_chambers(log: EventLog, leading_segments: str = "censor") -> list[Segment]:
    if leading_segments not in LEADING_POLICIES:
        raise InvalidConfig(f"leading_segments must be one of {LEADING_POLICIES} (got {leading_segments!r})")
    breakdowns = log.breakdown_times()
    out: list[Segment] = []
    for chamber, runs in sorted(log.runs_by_chamber().items()):
        bounds = sorted(breakdowns.get(chamber, ()))
        groups = _partition(runs, bounds)
        index = 0
        for slot, members in enumerate(groups):
            if not members:
                continue
            breakdown = bounds[slot] if slot < len(bounds) else None
            leading = slot == 0
            censored = breakdown is None or (leading and leading_segments == "censor")
            out.append(
                Segment(
                    segment_id=f"{chamber}-S{index:03d}",
                    chamber_id=chamber,
                    start=members[0].start if leading else bounds[slot - 1],
                    breakdown_time=breakdown,
                    total_productive_hours=_running_sum(r.duration for r in members)[-1],
                    censored=censored,
                    n_runs=len(members),
                )
            )
            index += 1
        empty = sum(1 for g in groups[:-1] if not g)
        if empty:
            logger.debug("chamber %s: %d breakdown intervals without runs", chamber, empty)
    logger.info(
        "segmented %d chambers into %d segments (%d complete)",
        len({s.chamber_id for s in out}), len(out), sum(1 for s in out if not s.censored),
    )
    return out


def _partition(runs: Sequence[Run], bounds: Sequence[float]) -> list[list[Run]]:
    groups: list[list[Run]] = [[] for _ in range(len(bounds) + 1)]
    for run in runs:
        groups[bisect.bisect_right(bounds, run.start)].append(run)
    return groups


def _running_sum(values: Iterable[float]) -> list[float]:
    total = 0.0
    out = []
    for v in values:
        total += v
        out.append(total)
    return out


def _segment_members(log: EventLog, segments: Sequence[Segment]) -> list[tuple[Segment, list[Run]]]:
    by_chamber: dict[str, list[Segment]] = {}
    for seg in segments:
        by_chamber.setdefault(seg.chamber_id, []).append(seg)
    out: list[tuple[Segment, list[Run]]] = []
    for chamber, runs in sorted(log.runs_by_chamber().items()):
        segs = sorted(by_chamber.get(chamber, ()), key=lambda s: s.start)
        ends = [s.end for s in segs]
        members: list[list[Run]] = [[] for _ in segs]
        for run in runs:
            slot = bisect.bisect_right(ends, run.start)
            if slot < len(segs):
                members[slot].append(run)
        out.extend((seg, m) for seg, m in zip(segs, members) if m)
    return out


def compute_ttf(log: EventLog, segments: Sequence[Segment]) -> list[LabeledRun]:
    labeled: list[LabeledRun] = []
    for seg, runs in _segment_members(log, segments):
        elapsed = _running_sum(r.duration for r in runs)
        ttfs: list[float | None] = [None] * len(runs)
        if not seg.censored:
            remaining = 0.0
            for i in range(len(runs) - 1, -1, -1):
                ttfs[i] = remaining
                remaining += runs[i].duration
        for run, ttf, hours in zip(runs, ttfs, elapsed):
            labeled.append(
                LabeledRun(
                    run=run,
                    segment_id=seg.segment_id,
                    censored=seg.censored,
                    elapsed=hours,
                    segment_end=seg.end,
                    ttf=ttf,
                )
            )
    return labeled


def compute_health(labeled: Sequence[LabeledRun]) -> list[LabeledRun]:
    peak: dict[str, float] = {}
    for lr in labeled:
        if lr.ttf is not None:
            peak[lr.segment_id] = max(peak.get(lr.segment_id, 0.0), lr.ttf)
    out = []
    for lr in labeled:
        if lr.ttf is None:
            out.append(lr)
            continue
        top = peak[lr.segment_id]
        out.append(replace(lr, health=lr.ttf / top if top > 0 else 0.0))
    return out


def check_bounds(bounds: Sequence[float]) -> tuple[float, ...]:
    values = tuple(float(b) for b in bounds)
    if not values:
        raise InvalidConfig("interval bounds must not be empty")
    if values[0] <= 0 or any(b <= a for a, b in zip(values, values[1:])):
        raise InvalidConfig(f"interval bounds must be strictly increasing positives (got {list(values)})")
    return values


def compute_interval_labels(
    labeled: Sequence[LabeledRun], bounds: Sequence[float] = DEFAULT_BOUNDS
) -> list[LabeledRun]:
    values = check_bounds(bounds)
    return [
        lr if lr.ttf is None else replace(lr, interval_labels={b: lr.ttf <= b for b in values})
        for lr in labeled
    ]


def short_segments(segments: Iterable[Segment], min_hours: float) -> list[Segment]:
    return [s for s in segments if not s.censored and s.total_productive_hours < min_hours]


def clean_short_segments(
    labeled: Sequence[LabeledRun], segments: Sequence[Segment], min_hours: float
) -> tuple[list[LabeledRun], list[Segment]]:
    if min_hours < 0:
        raise InvalidConfig(f"min_hours must be >= 0 (got {min_hours})")
    dropped = short_segments(segments, min_hours)
    for seg in dropped:
        logger.info(
            "removed short segment %s (%.3f productive hours, %d runs)",
            seg.segment_id,
            seg.total_productive_hours,
            seg.n_runs,
        )
    gone = {s.segment_id for s in dropped}
    kept_segments = [s for s in segments if s.segment_id not in gone]
    kept_runs = [lr for lr in labeled if lr.segment_id not in gone]
    if not kept_runs or (dropped and not any(not s.censored for s in kept_segments)):
        raise EmptyResult(f"no complete segment has at least {min_hours} productive hours")
    return kept_runs, kept_segments


def label_log(
    log: EventLog,
    min_segment_hours: float = 5.0,
    bounds: Sequence[float] = DEFAULT_BOUNDS,
    leading_segments: str = "censor",
) -> LabeledDataset:
    """segment -> ttf -> health -> interval labels -> short-segment cleaning."""
    values = check_bounds(bounds)
    segments = segment_chambers(log, leading_segments)
    labeled = compute_interval_labels(compute_health(compute_ttf(log, segments)), values)
    removed = short_segments(segments, min_segment_hours)
    labeled, segments = clean_short_segments(labeled, segments, min_segment_hours)
    return LabeledDataset(tuple(labeled), tuple(segments), values, tuple(removed))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _bound_key(bound: float) -> str:
    return f"{bound:g}"


def save_labeled(dataset: LabeledDataset, directory: str | Path) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    runs_path = directory / LABELED_FILE
    with runs_path.open("w", encoding="utf-8", newline="\n") as fh:
        for lr in dataset.runs:
            row = {
                "chamber": lr.run.chamber_id,
                "run": lr.run.run_id,
                "segment": lr.segment_id,
                "censored": lr.censored,
                "elapsed": lr.elapsed,
                "segment_end": None if math.isinf(lr.segment_end) else lr.segment_end,
                "ttf": lr.ttf,
                "health": lr.health,
                "intervals": {_bound_key(b): v for b, v in lr.interval_labels.items()},
            }
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
    seg_path = directory / SEGMENTS_FILE
    with seg_path.open("w", encoding="utf-8", newline="\n") as fh:
        for seg in dataset.segments:
            fh.write(json.dumps({**seg.to_dict(), "removed": False}, separators=(",", ":")) + "\n")
        for seg in dataset.removed:
            fh.write(json.dumps({**seg.to_dict(), "removed": True}, separators=(",", ":")) + "\n")
    return {"labeled": runs_path, "segments": seg_path}


def load_labeled(directory: str | Path, log: EventLog) -> LabeledDataset:
    """Rebuild a LabeledDataset and re-attach each row to its run in ``log``."""
    directory = Path(directory)
    runs_path = directory / LABELED_FILE
    seg_path = directory / SEGMENTS_FILE
    for path in (runs_path, seg_path):
        if not path.exists():
            raise MissingFile(str(path))

    segments: list[Segment] = []
    removed: list[Segment] = []
    for lineno, obj in _iter_jsonl(seg_path):
        try:
            (removed if obj.get("removed") else segments).append(Segment.from_dict(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(seg_path.name, lineno, f"bad segment row: {exc}") from exc

    index = {run.key: run for run in log.runs}
    labeled: list[LabeledRun] = []
    bounds: tuple[float, ...] | None = None
    for lineno, obj in _iter_jsonl(runs_path):
        try:
            key = (str(obj["chamber"]), str(obj["run"]))
            intervals = {float(k): bool(v) for k, v in obj["intervals"].items()}
            end = obj["segment_end"]
            row = LabeledRun(
                run=index[key],
                segment_id=str(obj["segment"]),
                censored=bool(obj["censored"]),
                elapsed=float(obj["elapsed"]),
                segment_end=math.inf if end is None else float(end),
                ttf=None if obj["ttf"] is None else float(obj["ttf"]),
                health=None if obj["health"] is None else float(obj["health"]),
                interval_labels=intervals,
            )
        except KeyError as exc:
            raise MalformedRecord(runs_path.name, lineno, f"unknown run or missing field {exc}") from exc
        except (TypeError, ValueError, AttributeError) as exc:
            raise MalformedRecord(runs_path.name, lineno, str(exc)) from exc
        if intervals and bounds is None:
            bounds = tuple(sorted(intervals))
        labeled.append(row)
    return LabeledDataset(tuple(labeled), tuple(segments), bounds or DEFAULT_BOUNDS, tuple(removed))


def _iter_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(path.name, lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise MalformedRecord(path.name, lineno, "expected JSON object")
            yield lineno, obj
