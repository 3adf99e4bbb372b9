from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
import pytest

from etchforge.cli import main
from etchforge.config import PipelineConfig

from conftest import FAST_GRID, SMALL_SIM


@pytest.fixture(scope="module")
def workspace(tmp_path_factory: pytest.TempPathFactory) -> dict[str, Path]:
    root = tmp_path_factory.mktemp("cli")
    config = root / "pipeline.json"
    payload = PipelineConfig(sim=SMALL_SIM, models=FAST_GRID).to_dict()
    payload["features"]["feature_sets"] = ["FS3", "FS7"]
    config.write_text(json.dumps(payload), encoding="utf-8")
    sim, labels = root / "sim", root / "labels"
    assert main(["--log-level", "WARNING", "simulate", "--config", str(config), "--out", str(sim)]) == 0
    assert main(["label", "--config", str(config), "--in", str(sim), "--out", str(labels)]) == 0
    return {"root": root, "config": config, "sim": sim, "labels": labels}


def _stage(ws: dict[str, Path], name: str, out: str, *extra: str) -> int:
    args = [name, "--config", str(ws["config"]), "--in", str(ws["sim"]), "--labels", str(ws["labels"])]
    return main([*args, "--out", str(ws["root"] / out), *extra])


def test_simulate_is_byte_reproducible(tmp_path: Path, workspace: dict[str, Path]) -> None:
    again = tmp_path / "again"

    assert main(["simulate", "--config", str(workspace["config"]), "--out", str(again)]) == 0

    first = json.loads((workspace["sim"] / "manifest.json").read_text(encoding="utf-8"))
    second = json.loads((again / "manifest.json").read_text(encoding="utf-8"))
    assert first["outputs"] == second["outputs"]
    assert first["config"]["sim"]["seed"] == SMALL_SIM.seed


def test_simulate_flags_override_the_config(tmp_path: Path, workspace: dict[str, Path]) -> None:
    out = tmp_path / "seeded"

    assert main(["simulate", "--config", str(workspace["config"]), "--seed", "8", "--out", str(out)]) == 0

    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["config"]["sim"]["seed"] == 8
    assert manifest["outputs"] != json.loads((workspace["sim"] / "manifest.json").read_text())["outputs"]


def test_usage_errors_exit_with_2() -> None:
    with pytest.raises(SystemExit) as info:
        main(["simulate"])

    assert info.value.code == 2


def test_missing_input_directory_exits_with_1(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code = main(["validate", "--in", str(tmp_path / "nowhere")])

    assert code == 1
    assert capsys.readouterr().err.startswith("error: ")


def test_validate_clean_log(tmp_path: Path, workspace: dict[str, Path], capsys: pytest.CaptureFixture[str]) -> None:
    issues = tmp_path / "issues.json"

    assert main(["validate", "--in", str(workspace["sim"]), "--out", str(issues)]) == 0

    assert json.loads(issues.read_text(encoding="utf-8")) == []
    assert "  issues: 0" in capsys.readouterr().out


def test_validate_reports_issues(tmp_path: Path) -> None:
    (tmp_path / "runs.jsonl").write_text(
        '{"chamber":"C1","run":"a","recipe":"R0","start":0,"duration":2,"sensors":{}}\n'
        '{"chamber":"C1","run":"b","recipe":"R0","start":1,"duration":2,"sensors":{}}\n',
        encoding="utf-8",
    )
    for name in ("alarms", "violations", "states"):
        (tmp_path / f"{name}.jsonl").write_text("", encoding="utf-8")

    assert main(["validate", "--in", str(tmp_path)]) == 1


def test_label_writes_manifest_and_cleaning_report(workspace: dict[str, Path]) -> None:
    labels = workspace["labels"]

    manifest = json.loads((labels / "manifest.json").read_text(encoding="utf-8"))
    report = json.loads((labels / "cleaning_report.json").read_text(encoding="utf-8"))

    assert manifest["stage"] == "label"
    assert "runs.jsonl" in manifest["inputs"]
    assert set(manifest["outputs"]) >= {"cleaning_report.json"}
    assert report["min_segment_hours"] == 5.0


def test_penalties_are_sorted_by_median(workspace: dict[str, Path]) -> None:
    assert _stage(workspace, "penalties", "penalties") == 0

    out = workspace["root"] / "penalties"
    alarms = pd.read_csv(out / "alarm_medians.csv")
    assert list(alarms.columns) == ["code", "class", "occurrences", "median_ttf", "penalty"]
    assert alarms["median_ttf"].is_monotonic_increasing
    assert (alarms["penalty"] > 0).all()
    expected = 1.0 / alarms["median_ttf"].clip(lower=1.0)
    assert (alarms["penalty"] - expected).abs().max() < 1e-5
    assert (alarms["occurrences"] > 0).all()
    tables = json.loads((out / "penalties.json").read_text(encoding="utf-8"))
    assert set(tables) == {"alarms", "violations"}


def test_features_export_configured_sets(workspace: dict[str, Path]) -> None:
    assert _stage(workspace, "features", "features", "--feature-sets", "FS1", "FS7") == 0

    out = workspace["root"] / "features"
    assert (out / "FS1.csv").exists()
    assert (out / "FS7.csv").exists()
    assert not (out / "FS3.csv").exists()
    header = (out / "FS7.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("chamber,run,")
    prune = json.loads((out / "prune_report.json").read_text(encoding="utf-8"))
    assert prune["threshold"] == 0.95


def test_train_writes_a_loadable_model(workspace: dict[str, Path]) -> None:
    assert _stage(workspace, "train", "model", "--task", "ttf", "--feature-set", "FS7", "--family", "LR") == 0

    model = json.loads((workspace["root"] / "model" / "model.json").read_text(encoding="utf-8"))
    assert model["task"] == "ttf_regression"
    assert model["feature_set"] == "FS7"


def test_interval_training_needs_a_bound(workspace: dict[str, Path]) -> None:
    args = ("--task", "interval", "--feature-set", "FS7", "--family", "TREE")

    assert _stage(workspace, "train", "no-bound", *args) == 1
    assert _stage(workspace, "train", "bound", *args, "--bound", "24") == 0


def test_evaluate_interval_task(workspace: dict[str, Path], capsys: pytest.CaptureFixture[str]) -> None:
    code = _stage(workspace, "evaluate", "eval", "--task", "interval", "--bounds", "8,16,24", "--feature-sets", "FS7")

    assert code == 0
    out = capsys.readouterr().out
    for key in ("0-8h", "0-16h", "0-24h"):
        assert key in out
    manifest = json.loads((workspace["root"] / "eval" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["config"]["labeling"]["interval_bounds"] == [8.0, 16.0, 24.0]


def test_evaluate_ttf_with_family_filter(workspace: dict[str, Path]) -> None:
    code = _stage(workspace, "evaluate", "eval-ttf", "--task", "ttf", "--families", "LR", "--feature-sets", "FS7")

    assert code == 0
    manifest = json.loads((workspace["root"] / "eval-ttf" / "manifest.json").read_text(encoding="utf-8"))
    assert [m["family"] for m in manifest["config"]["models"]["regression"]] == ["LR"]


def test_tampered_events_are_refused(tmp_path: Path, workspace: dict[str, Path]) -> None:
    sim = tmp_path / "sim"
    labels = tmp_path / "labels"
    assert main(["simulate", "--config", str(workspace["config"]), "--out", str(sim)]) == 0
    assert main(["label", "--config", str(workspace["config"]), "--in", str(sim), "--out", str(labels)]) == 0

    with (sim / "alarms.jsonl").open("a", encoding="utf-8") as fh:
        fh.write('{"chamber":"C1","time":1.0,"code":"A1","category":"warning"}\n')

    code = main(["penalties", "--in", str(sim), "--labels", str(labels), "--out", str(tmp_path / "p")])
    assert code == 1


@pytest.mark.parametrize(
    "flags",
    [["--chambers", "0"], ["--seed", "-1"], ["--horizon", "0"], ["--chambers", "two"]],
)
def test_out_of_range_simulate_flags_are_usage_errors(tmp_path: Path, flags: list[str]) -> None:
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--out", str(tmp_path / "sim"), *flags])

    assert info.value.code == 2
    assert not (tmp_path / "sim").exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["label", "--in", "x", "--out", "y", "--min-segment-hours", "-1"],
        ["label", "--in", "x", "--out", "y", "--bounds", "8,-24"],
        ["features", "--in", "x", "--labels", "l", "--out", "y", "--threshold", "1.5"],
        ["features", "--in", "x", "--labels", "l", "--out", "y", "--window-runs", "0"],
        ["train", "--in", "x", "--labels", "l", "--out", "y", "--task", "interval", "--feature-set", "FS7",
         "--family", "TREE", "--bound", "0"],
    ],
)
def test_out_of_range_stage_flags_are_usage_errors(argv: list[str]) -> None:
    with pytest.raises(SystemExit) as info:
        main(argv)

    assert info.value.code == 2


def test_stale_labeled_file_is_refused(tmp_path: Path, workspace: dict[str, Path]) -> None:
    sim = tmp_path / "sim"
    labels = tmp_path / "labels"
    assert main(["simulate", "--config", str(workspace["config"]), "--out", str(sim)]) == 0
    assert main(["label", "--config", str(workspace["config"]), "--in", str(sim), "--out", str(labels)]) == 0

    labeled = labels / "labeled.jsonl"
    lines = labeled.read_text(encoding="utf-8").splitlines(keepends=True)
    labeled.write_text("".join(lines[:-1]), encoding="utf-8")

    args = ["--config", str(workspace["config"]), "--in", str(sim), "--labels", str(labels)]
    code = main(["evaluate", *args, "--out", str(tmp_path / "eval"), "--task", "ttf", "--feature-sets", "FS7"])
    assert code == 1
    assert not (tmp_path / "eval" / "manifest.json").exists()
