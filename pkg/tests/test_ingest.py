from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest

from etchforge.errors import DuplicateRunId, EmptyResult, MalformedRecord, MissingFile
from etchforge.ingest import (
    AlarmEvent,
    EventLog,
    Run,
    StateChange,
    filter_recipes,
    limit_map,
    parse_event_log,
    validate,
    write_event_log,
)

from conftest import FIXTURES


def _copy_log(src: Path, dst: Path) -> Path:
    shutil.copytree(src, dst)
    return dst


def _append(path: Path, record: dict) -> None:
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")


def test_parse_fixture_log(tiny_log: EventLog) -> None:
    assert len(tiny_log.runs) == 7
    assert len(tiny_log.alarms) == 6
    assert len(tiny_log.violations) == 2
    assert len(tiny_log.dips) == 2
    assert tiny_log.chambers() == ["C1"]
    assert tiny_log.recipes() == ["R0", "R1"]
    assert tiny_log.breakdown_times() == {"C1": [10.5, 20.5]}


def test_three_run_golden_file() -> None:
    log = parse_event_log(FIXTURES / "three_runs")

    assert log.runs == (
        Run("C2", "r00017", "R3", 412.5, 0.453125, {"s00": 1.02, "s01": None}),
        Run("C2", "r00018", "R3", 413.0, 0.5, {"s00": 0.98, "s01": -3.5}),
        Run("C2", "r00019", "R1", 414.25, 1.25, {"s00": 1.1}),
    )
    assert log.alarms == ()
    assert log.dips == ()


def test_null_sensor_is_kept_distinct_from_absent(tiny_log: EventLog) -> None:
    r1 = next(r for r in tiny_log.runs if r.run_id == "r1")

    assert "s2" in r1.sensors
    assert r1.sensors["s2"] is None
    assert r1.end == pytest.approx(6.5)


def test_dips_stream_is_optional(tmp_path: Path, tiny_dir: Path) -> None:
    log_dir = _copy_log(tiny_dir, tmp_path / "log")
    (log_dir / "dips.jsonl").unlink()

    log = parse_event_log(log_dir)

    assert log.dips == ()
    assert len(log.runs) == 7


def test_missing_required_stream(tmp_path: Path, tiny_dir: Path) -> None:
    log_dir = _copy_log(tiny_dir, tmp_path / "log")
    (log_dir / "states.jsonl").unlink()

    with pytest.raises(MissingFile):
        parse_event_log(log_dir)


@pytest.mark.parametrize(
    ("stream", "record", "reason"),
    [
        ("runs", {"chamber": "C1", "run": "rx", "recipe": "R0", "start": 30.0, "duration": 0.0}, "duration"),
        ("runs", {"chamber": "C1", "run": "rx", "recipe": "R0", "start": "late", "duration": 1.0}, "start"),
        ("alarms", {"chamber": "C1", "time": 1.0, "code": "A9", "category": "fatal"}, "category"),
        ("states", {"chamber": "C1", "time": 1.0}, "state"),
        ("dips", {"chamber": "C1", "time": 1.0, "magnitude": -2.0}, "magnitude"),
    ],
)
def test_malformed_record_names_file_and_line(
    tmp_path: Path, tiny_dir: Path, stream: str, record: dict, reason: str
) -> None:
    log_dir = _copy_log(tiny_dir, tmp_path / "log")
    path = log_dir / f"{stream}.jsonl"
    n_lines = len(path.read_text(encoding="utf-8").splitlines())
    _append(path, record)

    with pytest.raises(MalformedRecord) as info:
        parse_event_log(log_dir)

    assert info.value.file == f"{stream}.jsonl"
    assert info.value.line == n_lines + 1
    assert reason in info.value.reason


def test_invalid_json_line(tmp_path: Path, tiny_dir: Path) -> None:
    log_dir = _copy_log(tiny_dir, tmp_path / "log")
    with (log_dir / "alarms.jsonl").open("a", encoding="utf-8") as fh:
        fh.write("{not json\n")

    with pytest.raises(MalformedRecord, match="invalid JSON"):
        parse_event_log(log_dir)


def test_duplicate_run_id(tmp_path: Path, tiny_dir: Path) -> None:
    log_dir = _copy_log(tiny_dir, tmp_path / "log")
    _append(
        log_dir / "runs.jsonl",
        {"chamber": "C1", "run": "r3", "recipe": "R0", "start": 40.0, "duration": 1.0, "sensors": {}},
    )

    with pytest.raises(DuplicateRunId) as info:
        parse_event_log(log_dir)

    assert (info.value.chamber_id, info.value.run_id) == ("C1", "r3")


def test_write_then_parse_keeps_every_record(tmp_path: Path, tiny_log: EventLog) -> None:
    write_event_log(tiny_log, tmp_path / "copy")

    again = parse_event_log(tmp_path / "copy")

    assert again == tiny_log


def test_fixture_log_validates_clean(tiny_log: EventLog) -> None:
    assert validate(tiny_log) == []


def test_validate_reports_structural_problems() -> None:
    log = EventLog(
        runs=(
            Run("C1", "a", "R0", 0.0, 2.0),
            Run("C1", "b", "R0", 1.0, 2.0),
            Run("C1", "c", "R0", 4.0, 2.0),
        ),
        alarms=(AlarmEvent("C9", 0.5, "A1", "warning"),),
        states=(
            StateChange("C1", 0.0, "breakdown"),
            StateChange("C1", 5.0, "breakdown"),
        ),
    )

    kinds = sorted(issue.kind for issue in validate(log))

    assert kinds == [
        "BreakdownWithoutProductive",
        "BreakdownWithoutProductive",
        "OverlappingRuns",
        "RepeatedState",
        "RunSpansBreakdown",
        "UnknownChamber",
    ]


def test_filter_recipes_keeps_events(tiny_log: EventLog) -> None:
    only_r0 = filter_recipes(tiny_log, ["R0"])

    assert {r.recipe_id for r in only_r0.runs} == {"R0"}
    assert only_r0.alarms == tiny_log.alarms

    with pytest.raises(EmptyResult):
        filter_recipes(tiny_log, ["CLEAN0"])


def test_limit_map(tiny_log: EventLog) -> None:
    assert limit_map(tiny_log.violations) == {"V1": "s0", "V2": "s2"}
