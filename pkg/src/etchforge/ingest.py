"""Event-log data model and the JSONL codec for the five raw equipment streams.

Streams live side by side in one directory:

  runs.jsonl        {"chamber","run","recipe","start","duration","sensors"}
  alarms.jsonl      {"chamber","time","code","category"}
  violations.jsonl  {"chamber","time","code","severity","sensor"}
  states.jsonl      {"chamber","time","state"}
  dips.jsonl        {"chamber","time","magnitude"}          (optional)

Times are real-valued hours from an arbitrary epoch. A null sensor value means the
parameter was not used in that run; an absent key is kept distinct from zero.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .errors import DuplicateRunId, EmptyResult, InvalidConfig, MalformedRecord, MissingFile

logger = logging.getLogger(__name__)

ALARM_CATEGORIES = ("warning", "information", "critical", "error", "other")
VIOLATION_SEVERITIES = ("error", "information")
STATES = ("standby", "productive", "breakdown", "maintenance")

REQUIRED_STREAMS = ("runs", "alarms", "violations", "states")
OPTIONAL_STREAMS = ("dips",)
STREAM_FILES = {name: f"{name}.jsonl" for name in REQUIRED_STREAMS + OPTIONAL_STREAMS}


@dataclass(frozen=True, slots=True)
class Run:
    chamber_id: str
    run_id: str
    recipe_id: str
    start: float
    duration: float
    sensors: Mapping[str, float | None] = field(default_factory=dict)

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def key(self) -> tuple[str, str]:
        return (self.chamber_id, self.run_id)


@dataclass(frozen=True, slots=True)
class AlarmEvent:
    chamber_id: str
    time: float
    code: str
    category: str


@dataclass(frozen=True, slots=True)
class LimitViolationEvent:
    chamber_id: str
    time: float
    code: str
    severity: str
    sensor: str


@dataclass(frozen=True, slots=True)
class StateChange:
    chamber_id: str
    time: float
    state: str


@dataclass(frozen=True, slots=True)
class VoltageDip:
    chamber_id: str
    time: float
    magnitude: float


@dataclass(frozen=True, slots=True)
class EventLog:
    runs: tuple[Run, ...] = ()
    alarms: tuple[AlarmEvent, ...] = ()
    violations: tuple[LimitViolationEvent, ...] = ()
    states: tuple[StateChange, ...] = ()
    dips: tuple[VoltageDip, ...] = ()

    def chambers(self) -> list[str]:
        return sorted({r.chamber_id for r in self.runs} | {s.chamber_id for s in self.states})

    def recipes(self) -> list[str]:
        return sorted({r.recipe_id for r in self.runs})

    def runs_by_chamber(self) -> dict[str, list[Run]]:
        out: dict[str, list[Run]] = {}
        for run in self.runs:
            out.setdefault(run.chamber_id, []).append(run)
        return out

    def breakdown_times(self) -> dict[str, list[float]]:
        out: dict[str, list[float]] = {}
        for change in self.states:
            if change.state == "breakdown":
                out.setdefault(change.chamber_id, []).append(change.time)
        return out


@dataclass(frozen=True, slots=True)
class ValidationIssue:
    kind: str
    chamber_id: str
    time: float
    detail: str

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "chamber": self.chamber_id, "time": self.time, "detail": self.detail}


# ---------------------------------------------------------------------------
# field checks
# ---------------------------------------------------------------------------

_Where = tuple[str, int]


def _fail(where: _Where, reason: str) -> MalformedRecord:
    return MalformedRecord(where[0], where[1], reason)


def _str_field(obj: dict, key: str, where: _Where) -> str:
    if key not in obj:
        raise _fail(where, f"missing field {key!r}")
    val = obj[key]
    if not isinstance(val, str):
        raise _fail(where, f"{key}: expected string, got {type(val).__name__}")
    if not val.strip():
        raise _fail(where, f"{key}: cannot be empty")
    return val


def _num(val: Any, key: str, where: _Where) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise _fail(where, f"{key}: expected number, got {type(val).__name__}")
    val = float(val)
    if not math.isfinite(val):
        raise _fail(where, f"{key}: must be finite")
    return val


def _num_field(obj: dict, key: str, where: _Where) -> float:
    if key not in obj:
        raise _fail(where, f"missing field {key!r}")
    return _num(obj[key], key, where)


def _enum_field(obj: dict, key: str, allowed: tuple[str, ...], where: _Where) -> str:
    val = _str_field(obj, key, where)
    if val not in allowed:
        raise _fail(where, f"{key}: {val!r} not one of {', '.join(allowed)}")
    return val


def _decode_run(obj: dict, where: _Where) -> Run:
    duration = _num_field(obj, "duration", where)
    if duration <= 0:
        raise _fail(where, f"duration: must be > 0 (got {duration})")
    raw_sensors = obj.get("sensors", {})
    if not isinstance(raw_sensors, dict):
        raise _fail(where, f"sensors: expected object, got {type(raw_sensors).__name__}")
    sensors: dict[str, float | None] = {}
    for name, value in raw_sensors.items():
        sensors[name] = None if value is None else _num(value, f"sensors.{name}", where)
    return Run(
        chamber_id=_str_field(obj, "chamber", where),
        run_id=_str_field(obj, "run", where),
        recipe_id=_str_field(obj, "recipe", where),
        start=_num_field(obj, "start", where),
        duration=duration,
        sensors=sensors,
    )


def _decode_alarm(obj: dict, where: _Where) -> AlarmEvent:
    return AlarmEvent(
        chamber_id=_str_field(obj, "chamber", where),
        time=_num_field(obj, "time", where),
        code=_str_field(obj, "code", where),
        category=_enum_field(obj, "category", ALARM_CATEGORIES, where),
    )


def _decode_violation(obj: dict, where: _Where) -> LimitViolationEvent:
    return LimitViolationEvent(
        chamber_id=_str_field(obj, "chamber", where),
        time=_num_field(obj, "time", where),
        code=_str_field(obj, "code", where),
        severity=_enum_field(obj, "severity", VIOLATION_SEVERITIES, where),
        sensor=_str_field(obj, "sensor", where),
    )


def _decode_state(obj: dict, where: _Where) -> StateChange:
    return StateChange(
        chamber_id=_str_field(obj, "chamber", where),
        time=_num_field(obj, "time", where),
        state=_enum_field(obj, "state", STATES, where),
    )


def _decode_dip(obj: dict, where: _Where) -> VoltageDip:
    magnitude = _num_field(obj, "magnitude", where)
    if magnitude <= 0:
        raise _fail(where, f"magnitude: must be > 0 (got {magnitude})")
    return VoltageDip(
        chamber_id=_str_field(obj, "chamber", where),
        time=_num_field(obj, "time", where),
        magnitude=magnitude,
    )


_DECODERS: dict[str, Callable[[dict, _Where], Any]] = {
    "runs": _decode_run,
    "alarms": _decode_alarm,
    "violations": _decode_violation,
    "states": _decode_state,
    "dips": _decode_dip,
}


def _read_jsonl(path: Path, decoder: Callable[[dict, _Where], Any]) -> list[Any]:
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = (path.name, lineno)
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise _fail(where, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise _fail(where, f"expected JSON object, got {type(obj).__name__}")
            records.append(decoder(obj, where))
    return records


def parse_event_log(directory: str | Path) -> EventLog:
    directory = Path(directory)
    streams: dict[str, list[Any]] = {}
    for name in REQUIRED_STREAMS + OPTIONAL_STREAMS:
        path = directory / STREAM_FILES[name]
        if not path.exists():
            if name in REQUIRED_STREAMS:
                raise MissingFile(str(path))
            streams[name] = []
            continue
        streams[name] = _read_jsonl(path, _DECODERS[name])

    seen: set[tuple[str, str]] = set()
    for run in streams["runs"]:
        if run.key in seen:
            raise DuplicateRunId(run.chamber_id, run.run_id)
        seen.add(run.key)

    log = EventLog(
        runs=tuple(sorted(streams["runs"], key=lambda r: (r.chamber_id, r.start))),
        alarms=_sorted_events(streams["alarms"]),
        violations=_sorted_events(streams["violations"]),
        states=_sorted_events(streams["states"]),
        dips=_sorted_events(streams["dips"]),
    )
    logger.info(
        "parsed %s: %d runs, %d alarms, %d violations, %d state changes, %d dips",
        directory, len(log.runs), len(log.alarms), len(log.violations), len(log.states), len(log.dips),
    )
    return log


def _sorted_events(events: Iterable[Any]) -> tuple[Any, ...]:
    return tuple(sorted(events, key=lambda e: (e.chamber_id, e.time)))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _encode(stream: str, record: Any) -> dict[str, Any]:
    if stream == "runs":
        return {
            "chamber": record.chamber_id,
            "run": record.run_id,
            "recipe": record.recipe_id,
            "start": record.start,
            "duration": record.duration,
            "sensors": dict(record.sensors),
        }
    if stream == "alarms":
        return {"chamber": record.chamber_id, "time": record.time, "code": record.code, "category": record.category}
    if stream == "violations":
        return {
            "chamber": record.chamber_id,
            "time": record.time,
            "code": record.code,
            "severity": record.severity,
            "sensor": record.sensor,
        }
    if stream == "states":
        return {"chamber": record.chamber_id, "time": record.time, "state": record.state}
    return {"chamber": record.chamber_id, "time": record.time, "magnitude": record.magnitude}


def write_event_log(log: EventLog, directory: str | Path) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = {}
    for name in REQUIRED_STREAMS + OPTIONAL_STREAMS:
        path = directory / STREAM_FILES[name]
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for record in getattr(log, name):
                fh.write(json.dumps(_encode(name, record), ensure_ascii=False, separators=(",", ":")))
                fh.write("\n")
        written[name] = path
    return written


# ---------------------------------------------------------------------------
# validation and filtering
# ---------------------------------------------------------------------------


def validate(log: EventLog) -> list[ValidationIssue]:
    issues: list[ValidationIssue] = []
    known = set(log.chambers())

    for stream in ("alarms", "violations", "dips"):
        last: dict[str, float] = {}
        for event in getattr(log, stream):
            if event.chamber_id not in known:
                issues.append(ValidationIssue("UnknownChamber", event.chamber_id, event.time, f"{stream} event"))
            prev = last.get(event.chamber_id)
            if prev is not None and event.time < prev:
                issues.append(ValidationIssue("OutOfOrder", event.chamber_id, event.time, f"{stream} before {prev}"))
            last[event.chamber_id] = event.time

    breakdowns = log.breakdown_times()
    for chamber, runs in log.runs_by_chamber().items():
        max_end = -math.inf
        last_start = -math.inf
        for run in runs:
            if run.start < last_start:
                issues.append(ValidationIssue("OutOfOrder", chamber, run.start, f"run {run.run_id}"))
            if run.start < max_end:
                issues.append(
                    ValidationIssue("OverlappingRuns", chamber, run.start, f"run {run.run_id} starts before {max_end}")
                )
            for t in breakdowns.get(chamber, ()):
                if run.start < t < run.end:
                    issues.append(ValidationIssue("RunSpansBreakdown", chamber, t, f"run {run.run_id}"))
            last_start = max(last_start, run.start)
            max_end = max(max_end, run.end)

    by_chamber: dict[str, list[StateChange]] = {}
    for change in log.states:
        by_chamber.setdefault(change.chamber_id, []).append(change)
    for chamber, changes in by_chamber.items():
        productive_since_breakdown = False
        prev: StateChange | None = None
        for change in changes:
            if prev is not None:
                if change.time <= prev.time:
                    issues.append(ValidationIssue("OutOfOrder", chamber, change.time, f"state {change.state}"))
                if change.state == prev.state:
                    issues.append(ValidationIssue("RepeatedState", chamber, change.time, f"{change.state} twice"))
            if change.state == "productive":
                productive_since_breakdown = True
            elif change.state == "breakdown":
                if not productive_since_breakdown:
                    issues.append(
                        ValidationIssue("BreakdownWithoutProductive", chamber, change.time, "no productive state")
                    )
                productive_since_breakdown = False
            prev = change
    return issues


def filter_recipes(log: EventLog, productive_recipes: Iterable[str]) -> EventLog:
    keep = set(productive_recipes)
    if not keep:
        raise InvalidConfig("productive recipe set must not be empty")
    runs = tuple(r for r in log.runs if r.recipe_id in keep)
    if not runs:
        raise EmptyResult(f"no run uses any of the recipes {sorted(keep)}")
    logger.info("recipe filter kept %d of %d runs", len(runs), len(log.runs))
    return replace(log, runs=runs)


def limit_map(violations: Iterable[LimitViolationEvent]) -> dict[str, str]:
    """Violation code -> the APC sensor its limit is defined on."""
    out: dict[str, str] = {}
    for event in violations:
        bound = out.setdefault(event.code, event.sensor)
        if bound != event.sensor:
            logger.warning("violation %s recorded on %s and %s; keeping %s", event.code, bound, event.sensor, bound)
    return out
