from __future__ import annotations

import importlib.util
import json
from pathlib import Path

from etchforge.cli import main
from etchforge.config import PipelineConfig

from conftest import FAST_GRID, SMALL_SIM

REPO_ROOT = Path(__file__).resolve().parents[1]


def _load_module(name: str, relative_path: str):
    module_path = REPO_ROOT / relative_path
    spec = importlib.util.spec_from_file_location(name, module_path)
    assert spec is not None and spec.loader is not None
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


run_acceptance = _load_module("run_acceptance", "tools/run_acceptance.py")


def _pipeline(root: Path, config: Path) -> Path:
    sim, labels, out = root / "sim", root / "labels", root / "eval"
    assert main(["simulate", "--config", str(config), "--out", str(sim)]) == 0
    assert main(["label", "--config", str(config), "--in", str(sim), "--out", str(labels)]) == 0
    args = ["evaluate", "--config", str(config), "--in", str(sim), "--labels", str(labels), "--out", str(out)]
    assert main([*args, "--feature-sets", "FS7"]) == 0
    return out


def test_two_full_runs_are_byte_identical(tmp_path: Path) -> None:
    config = tmp_path / "pipeline.json"
    config.write_text(json.dumps(PipelineConfig(sim=SMALL_SIM, models=FAST_GRID).to_dict()), encoding="utf-8")

    first = _pipeline(tmp_path / "a", config)
    second = _pipeline(tmp_path / "b", config)

    names = sorted(p.name for p in first.iterdir())
    reports = {"ttf_regression.json", "health_regression.json", "interval_classification.json", "manifest.json"}
    assert reports <= set(names)
    assert names == sorted(p.name for p in second.iterdir())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_every_check_is_registered() -> None:
    assert list(run_acceptance._REGISTRY) == [
        "ttf_oracle",
        "metric_consistency",
        "standardization",
        "pruning_truth",
        "fold_leakage",
        "gradients",
        "regression_beats_b3",
        "interval_trend",
        "health_contract",
        "determinism",
    ]


def test_metric_consistency_check() -> None:
    result = run_acceptance.run_check("metric_consistency", quick=True)

    assert result["pass"], result
    assert result["precision"] == 0.25


def test_quick_property_checks_pass() -> None:
    for name in ("ttf_oracle", "standardization", "health_contract", "gradients"):
        result = run_acceptance.run_check(name, quick=True)
        assert result["pass"], result


def test_pruning_check_counts_every_kept_duplicate() -> None:
    result = run_acceptance.run_check("pruning_truth", quick=True)

    assert result["pass"], result
    assert result["kept_duplicates"] == []
    assert "constant_duplicates" in result


def test_fold_leakage_check_refits_a_corrupted_fold() -> None:
    result = run_acceptance.run_check("fold_leakage", quick=True)

    assert result["pass"], result
    assert result["identical_state"] and result["identical_features"]


def test_a_crashing_check_is_reported_as_failed(monkeypatch) -> None:
    def boom(quick: bool) -> dict:
        raise RuntimeError("no data")

    monkeypatch.setitem(run_acceptance._REGISTRY, "boom", boom)

    result = run_acceptance.run_check("boom", quick=True)

    assert result == {"check": "boom", "pass": False, "error": "RuntimeError: no data", "seconds": result["seconds"]}


def test_interval_trend_on_the_default_simulation() -> None:
    result = run_acceptance.run_check("interval_trend", quick=True)

    assert result["pass"], result
    assert set(result["b3_f1"]) == {"8", "24", "72", "168", "336"}
    assert result["positive_rate"]["336"] < 0.9
