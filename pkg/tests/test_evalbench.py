from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etchforge.config import EvaluationConfig, PipelineConfig
from etchforge.errors import InvalidModelSpec, TooFewSegments, ZeroBenchmark
from etchforge.evalbench import (
    BENCHMARKS,
    benchmark_b1,
    benchmark_b2,
    benchmark_b3,
    degradation_score,
    fit_fold,
    grouped_kfold,
    prepare_dataset,
    prf1,
    relative_rmse,
    rmse,
    run_task,
    write_report,
)
from etchforge.features import GROUPS
from etchforge.ingest import AlarmEvent, EventLog
from etchforge.labeling import label_log
from etchforge.models import ModelSpec


def test_benchmarks_on_fixture(tiny_log: EventLog) -> None:
    dataset = label_log(tiny_log, min_segment_hours=1.0, leading_segments="label")
    rows = dataset.complete_runs()
    s0 = [lr for lr in rows if lr.segment_id == "C1-S000"]
    s1 = [lr for lr in rows if lr.segment_id == "C1-S001"]
    train_segment = [s for s in dataset.segments if s.segment_id == "C1-S000"]

    b1 = benchmark_b1(s0, s1)
    b2 = benchmark_b2(s1)
    b3 = benchmark_b3(train_segment, s1)

    np.testing.assert_allclose(b1.values, [7 / 3] * 3)
    np.testing.assert_allclose(b2.values, [8 / 3] * 3)
    # mean training segment length is 7 h; elapsed in S001 is 1, 3, 6
    np.testing.assert_allclose(b3.values, [6.0, 4.0, 1.0])
    np.testing.assert_allclose(benchmark_b3(train_segment, s1, "health").values, [6 / 7, 4 / 7, 1 / 7])


def test_b3_never_goes_negative(tiny_log: EventLog) -> None:
    dataset = label_log(tiny_log, min_segment_hours=1.0, leading_segments="label")
    short = [replace(s, total_productive_hours=2.0) for s in dataset.complete_segments()]

    b3 = benchmark_b3(short, dataset.complete_runs())

    assert (b3.values >= 0).all()
    assert b3.values.min() == 0.0


def test_folds_never_split_a_segment(small_log: EventLog) -> None:
    dataset = label_log(small_log)
    segments = dataset.complete_segments()

    assignment = grouped_kfold(segments, k=4, seed=42)

    assert set(assignment.folds) == {s.segment_id for s in segments}
    assert sorted(set(assignment.folds.values())) == [0, 1, 2, 3]
    assert max(assignment.sizes()) - min(assignment.sizes()) <= 1
    assert grouped_kfold(segments, k=4, seed=42) == assignment


def test_too_few_segments(tiny_log: EventLog) -> None:
    dataset = label_log(tiny_log, min_segment_hours=1.0)

    with pytest.raises(TooFewSegments):
        grouped_kfold(dataset.segments, k=2)


def test_metrics() -> None:
    assert rmse([1.0, 3.0], [1.0, 1.0]) == pytest.approx(np.sqrt(2.0))
    assert relative_rmse(5.0, 10.0) == -0.5
    with pytest.raises(ZeroBenchmark):
        relative_rmse(1.0, 0.0)
    assert prf1([True, True, False, False], [True, False, True, False]) == (0.5, 0.5, 0.5)
    assert prf1([False, False], [False, False]) == (0.0, 0.0, 0.0)


def test_degradation_score_is_mean_segment_spearman() -> None:
    truth = [3.0, 2.0, 1.0, 0.0, 3.0, 2.0, 1.0, 0.0]
    segs = ["a"] * 4 + ["b"] * 4

    assert degradation_score([9.0, 5.0, 4.0, 1.0, 0.0, 1.0, 2.0, 3.0], truth, segs) == pytest.approx(0.0)
    assert degradation_score([4.0, 3.0, 2.0, 1.0, 8.0, 6.0, 4.0, 2.0], truth, segs) == pytest.approx(1.0)
    assert degradation_score([1.0, 1.0], [1.0, 0.0], ["a", "a"]) == 0.0


def test_degradation_score_needs_only_declared_dependencies(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setitem(sys.modules, "scipy", None)
    monkeypatch.setitem(sys.modules, "scipy.stats", None)

    assert degradation_score(np.arange(5.0), np.arange(5.0), ["S"] * 5) == pytest.approx(1.0)
    # tied predictions take average ranks
    assert degradation_score([1.0, 2.0, 2.0, 3.0], [1.0, 2.0, 3.0, 4.0], ["S"] * 4) == pytest.approx(4.5 / 22.5**0.5)


def test_ttf_regression_report(tmp_path: Path, small_log: EventLog, small_config: PipelineConfig) -> None:
    report = run_task("ttf_regression", ["FS6", "FS7"], small_config.models.regression, small_log, small_config)

    names = [(r.kind, r.name, r.feature_set) for r in report.rows]
    assert names[:3] == [("benchmark", b, None) for b in BENCHMARKS]
    assert len(report.model_rows()) == 4
    assert report.benchmark("B3").pooled["relative_rmse"] == 0.0
    b2 = report.benchmark("B2").pooled["rmse"]
    assert b2 <= report.benchmark("B1").pooled["rmse"]
    assert len(report.benchmark("B1").folds) == 4

    paths = write_report(report, tmp_path)
    payload = json.loads(paths["report"].read_text(encoding="utf-8"))
    assert payload["task"] == "ttf_regression"
    assert payload["n_runs"] == report.n_runs
    plot = paths["plot"].read_text(encoding="utf-8").splitlines()
    assert len(plot) == report.n_runs + 1
    assert "B3" in plot[0].split(",")


def test_health_regression_stays_in_unit_interval(small_log: EventLog, small_config: PipelineConfig) -> None:
    report = run_task("health_regression", ["FS7"], small_config.models.regression, small_log, small_config)

    frame = report.plot
    assert frame["truth"].between(0.0, 1.0).all()
    assert frame["B3"].between(0.0, 1.0).all()


def test_interval_classification_report(tmp_path: Path, small_log: EventLog, small_config: PipelineConfig) -> None:
    config = replace(small_config, labeling=replace(small_config.labeling, interval_bounds=(8.0, 24.0)))

    report = run_task("interval_classification", ["FS7"], config.models.classification, small_log, config)

    assert report.bounds == (8.0, 24.0)
    for row in report.rows:
        for key in ("8", "24"):
            cell = row.pooled["intervals"][key]
            assert 0.0 <= cell["f1"] <= 1.0
    table = write_report(report, tmp_path)["table"].read_text(encoding="utf-8").splitlines()
    assert table[0].startswith("interval,benchmark_precision")
    assert [line.split(",")[0] for line in table[1:]] == ["0-8h", "0-24h"]


def test_reports_are_reproducible(small_log: EventLog, small_config: PipelineConfig) -> None:
    a = run_task("ttf_regression", ["FS7"], small_config.models.regression, small_log, small_config)
    b = run_task("ttf_regression", ["FS7"], small_config.models.regression, small_log, small_config)

    assert a.to_json() == b.to_json()


def test_chamber_subset(small_log: EventLog, small_config: PipelineConfig) -> None:
    config = replace(small_config, evaluation=EvaluationConfig(k=2, chambers=("C1",)))
    _, dataset = prepare_dataset(small_log, config)

    report = run_task("ttf_regression", ["FS7"], config.models.regression, small_log, config, dataset=dataset)

    assert {s[:2] for s in report.folds.folds} == {"C1"}
    c1_runs = [lr for lr in dataset.complete_runs() if lr.run.chamber_id == "C1"]
    assert report.n_runs == len(c1_runs)


def test_task_and_model_must_agree(small_log: EventLog, small_config: PipelineConfig) -> None:
    with pytest.raises(InvalidModelSpec):
        run_task("ttf_regression", ["FS7"], [ModelSpec("KNN", "classification")], small_log, small_config)


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60), st.randoms(use_true_random=False))
def test_prf1_ignores_row_order(pairs: list[tuple[bool, bool]], rnd) -> None:
    shuffled = list(pairs)
    rnd.shuffle(shuffled)

    a = prf1([p for p, _ in pairs], [t for _, t in pairs])
    b = prf1([p for p, _ in shuffled], [t for _, t in shuffled])

    assert a == pytest.approx(b)


def _corrupt_fold(log: EventLog, dataset, test_ids: set[str]) -> EventLog:
    test_runs = {lr.key: lr.run for lr in dataset.runs if lr.segment_id in test_ids}
    runs = tuple(
        replace(r, sensors={k: None if v is None else 50.0 * v + 7.0 for k, v in r.sensors.items()})
        if r.key in test_runs
        else r
        for r in log.runs
    )
    extra = [AlarmEvent(r.chamber_id, r.start + r.duration / 2, "A999", "critical") for r in test_runs.values()]
    alarms = tuple(sorted([*log.alarms, *extra], key=lambda e: (e.chamber_id, e.time)))
    return replace(log, runs=runs, alarms=alarms)


def _fitted_state(builder) -> dict:
    state = builder.to_dict()
    # unattached counts every event outside the training segments, test fold included
    for table in ("alarm_penalties", "violation_penalties"):
        state[table] = {k: v for k, v in state[table].items() if k != "unattached"}
    return state


def test_test_fold_data_does_not_reach_the_fitted_fold(small_log: EventLog, small_config: PipelineConfig) -> None:
    log, dataset = prepare_dataset(small_log, small_config)
    assignment = grouped_kfold(dataset.complete_segments(), k=4, seed=42)
    test_ids = set(assignment.fold_segments(0))
    corrupted_log = _corrupt_fold(log, dataset, test_ids)
    _, relabeled = prepare_dataset(corrupted_log, small_config)
    relabeled = replace(
        relabeled,
        runs=tuple(
            replace(
                lr,
                ttf=3.0 * lr.ttf + 100.0,
                health=1.0 - lr.health,
                interval_labels={b: not v for b, v in lr.interval_labels.items()},
            )
            if lr.segment_id in test_ids and not lr.censored
            else lr
            for lr in relabeled.runs
        ),
    )

    clean = fit_fold(log, dataset, assignment, 0, small_config)
    dirty = fit_fold(corrupted_log, relabeled, assignment, 0, small_config)

    assert [lr.key for lr in dirty.test_rows] == [lr.key for lr in clean.test_rows]
    assert [lr.ttf for lr in dirty.test_rows] != [lr.ttf for lr in clean.test_rows]
    assert _fitted_state(clean.builder) == _fitted_state(dirty.builder)
    assert clean.builder.preprocessor.to_dict() == dirty.builder.preprocessor.to_dict()
    assert "A999" not in dirty.builder.alarm_penalties.penalties
    assert set(clean.train_blocks) == set(GROUPS)
    for group in GROUPS:
        assert clean.train_blocks[group].columns == dirty.train_blocks[group].columns
        np.testing.assert_array_equal(clean.train_blocks[group].values, dirty.train_blocks[group].values)
    test_rows = [lr for lr in relabeled.runs if lr.segment_id in test_ids and not lr.censored]
    np.testing.assert_allclose(
        benchmark_b1(dirty.train_rows, test_rows).values, benchmark_b1(clean.train_rows, test_rows).values
    )
    np.testing.assert_allclose(
        benchmark_b3(dirty.train_segments, test_rows).values, benchmark_b3(clean.train_segments, test_rows).values
    )
