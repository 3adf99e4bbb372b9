from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from etchforge.errors import EmptySelection, InvalidConfig, UnknownFeatureSet
from etchforge.features import (
    FEATURE_SETS,
    FeatureBuilder,
    FeatureSpec,
    PenaltyTable,
    apcv_features,
    attach_events,
    counter_features,
    dip_features,
    fit_penalties,
    median_report,
    recipe_mix_features,
)
from etchforge.ingest import EventLog
from etchforge.labeling import LabeledDataset, label_log
from etchforge.preprocess import PruneReport


@pytest.fixture
def tiny_labels(tiny_log: EventLog) -> LabeledDataset:
    return label_log(tiny_log, min_segment_hours=1.0, bounds=[4])


def test_events_attach_to_latest_started_run(tiny_log: EventLog, tiny_labels: LabeledDataset) -> None:
    attached, outside = attach_events(tiny_log.alarms, tiny_labels.runs)

    pairs = [(e.time, lr.run.run_id) for e, lr in attached]
    assert pairs == [(2.0, "r0"), (13.0, "r3"), (15.0, "r4"), (17.0, "r5")]
    # 0.5 precedes every run, 20.8 falls between a breakdown and the next run
    assert outside == 2


def test_penalties_use_median_ttf(tiny_log: EventLog, tiny_labels: LabeledDataset) -> None:
    table = fit_penalties(tiny_log.alarms, tiny_labels.runs, "alarm", epsilon_hours=1.0)

    assert table.medians == {"A1": 2.5, "A2": 3.0}
    assert table.penalties["A1"] == pytest.approx(0.4)
    assert table.penalties["A2"] == pytest.approx(1 / 3)
    assert table.counts == {"A1": 2, "A2": 1}
    assert table.unattached == 3
    assert table.penalty("A9") == 0.0


def test_penalty_floor_at_epsilon(tiny_log: EventLog, tiny_labels: LabeledDataset) -> None:
    late = [e for e in tiny_log.alarms if e.time == 17.0]

    table = fit_penalties(late, tiny_labels.runs, "alarm", epsilon_hours=0.25)

    assert table.medians == {"A1": 0.0}
    assert table.penalties == {"A1": 4.0}


def test_per_chamber_penalties(tiny_log: EventLog, tiny_labels: LabeledDataset) -> None:
    table = fit_penalties(tiny_log.alarms, tiny_labels.runs, "alarm", scope="chamber")

    assert table.penalty("A1", "C1") == pytest.approx(0.4)
    assert table.penalty("A1", "C2") == 0.0
    assert PenaltyTable.from_dict(table.to_dict()) == table

    with pytest.raises(InvalidConfig):
        fit_penalties(tiny_log.alarms, tiny_labels.runs, scope="fleet")


def test_median_report_is_sorted_by_median(tiny_log: EventLog, tiny_labels: LabeledDataset) -> None:
    table = fit_penalties(tiny_log.alarms, tiny_labels.runs, "alarm")

    frame = median_report(table, tiny_log.alarms)

    assert list(frame["code"]) == ["A1", "A2"]
    assert list(frame["class"]) == ["warning", "critical"]
    assert list(frame.columns) == ["code", "class", "occurrences", "median_ttf", "penalty"]


def test_counter_features_accumulate_within_segment(tiny_log: EventLog, tiny_labels: LabeledDataset) -> None:
    rows = tiny_labels.complete_runs()
    table = fit_penalties(tiny_log.alarms, rows, "alarm")

    values, columns = counter_features(tiny_log.alarms, rows, table, window_runs=10, prefix="al")

    assert columns == ["al_count", "al_weighted", "al_grad_sum", "al_grad_max"]
    np.testing.assert_allclose(values[:, 0], [1.0, 2.0, 3.0])
    np.testing.assert_allclose(values[:, 1], [1.4, 1.4 + 4 / 3, 2.8 + 4 / 3])
    np.testing.assert_allclose(values[:, 2], values[:, 1])
    np.testing.assert_allclose(values[:, 3], [1.4, 1.4, 1.4])


def test_counter_gradient_uses_trailing_window(tiny_log: EventLog, tiny_labels: LabeledDataset) -> None:
    rows = tiny_labels.complete_runs()
    table = fit_penalties(tiny_log.alarms, rows, "alarm")

    values, _ = counter_features(tiny_log.alarms, rows, table, window_runs=1)

    np.testing.assert_allclose(values[:, 2], [1.4, 4 / 3, 1.4])
    np.testing.assert_allclose(values[:, 3], [1.4, 4 / 3, 1.4])


def test_recipe_mix(tiny_labels: LabeledDataset) -> None:
    values, columns = recipe_mix_features(tiny_labels.complete_runs(), ["R0", "R1"], window_runs=2)

    assert columns == ["mix_R0", "mix_R1", "mix_other", "recipe_changes"]
    np.testing.assert_allclose(values, [[1.0, 0.0, 0.0, 0.0], [0.5, 0.5, 0.0, 1.0], [0.5, 0.5, 0.0, 1.0]])


def test_dip_window(tiny_log: EventLog, tiny_labels: LabeledDataset) -> None:
    values, columns = dip_features(tiny_log.dips, tiny_labels.complete_runs(), window_runs=2)

    assert columns == ["dip_count", "dip_max"]
    np.testing.assert_allclose(values, [[0.0, 0.0], [1.0, 5.0], [2.0, 8.0]])


def test_apcv_selects_limited_kept_sensors() -> None:
    matrix = np.arange(6.0).reshape(2, 3)
    report = PruneReport(("s0", "s1", "s2"), (("s3", "s0", 0.99),), 0.95)

    values, columns = apcv_features(matrix, report, {"V1": "s2", "V2": "s0", "V3": "s3"})

    assert columns == ["apc_s0", "apc_s2"]
    np.testing.assert_array_equal(values, matrix[:, [0, 2]])
    with pytest.raises(EmptySelection):
        apcv_features(matrix, report, {"V1": "s9"})


def test_unknown_feature_set() -> None:
    with pytest.raises(UnknownFeatureSet):
        FeatureSpec.named("FS9")
    assert FeatureSpec.named("FS4").groups == FEATURE_SETS["FS4"]


def test_builder_materializes_every_feature_set(tmp_path: Path, small_log: EventLog) -> None:
    dataset = label_log(small_log)
    rows = dataset.complete_runs()
    builder = FeatureBuilder.fit(small_log, rows, window_runs=5)

    for name, groups in FEATURE_SETS.items():
        matrix = builder.materialize(name, small_log, rows)
        assert matrix.values.shape == (len(rows), len(matrix.columns))
        assert set(matrix.groups.values()) == set(groups)
        assert np.isfinite(matrix.values).all()

    fs7 = builder.materialize("FS7", small_log, rows)
    csv_path, sidecar = fs7.to_csv(tmp_path / "FS7.csv")
    assert csv_path.read_text(encoding="utf-8").splitlines()[0] == "chamber,run," + ",".join(fs7.columns)
    assert json.loads(sidecar.read_text(encoding="utf-8")) == {c: "AL_P" for c in fs7.columns}
    assert FeatureBuilder.from_dict(json.loads(json.dumps(builder.to_dict()))) == builder


def test_features_ignore_the_future(small_log: EventLog) -> None:
    dataset = label_log(small_log)
    rows = dataset.complete_runs()
    builder = FeatureBuilder.fit(small_log, rows)
    full = builder.materialize("FS4", small_log, rows)

    cutoff = rows[len(rows) // 2].run.end
    past = EventLog(
        runs=small_log.runs,
        alarms=tuple(e for e in small_log.alarms if e.time <= cutoff),
        violations=tuple(e for e in small_log.violations if e.time <= cutoff),
        states=small_log.states,
        dips=tuple(e for e in small_log.dips if e.time <= cutoff),
    )
    truncated = builder.materialize("FS4", past, rows)

    early = [i for i, lr in enumerate(rows) if lr.run.end <= cutoff]
    np.testing.assert_array_equal(full.values[early], truncated.values[early])


def test_zeroed_penalty_removes_its_weight_from_the_counter(small_log: EventLog) -> None:
    rows = label_log(small_log).complete_runs()
    table = fit_penalties(small_log.alarms, rows, "alarm")
    code = max(table.counts, key=lambda c: (table.counts[c], c))
    zeroed = replace(table, penalties={**table.penalties, code: 0.0})
    own = [e for e in small_log.alarms if e.code == code]

    base, _ = counter_features(small_log.alarms, rows, table)
    without, _ = counter_features(small_log.alarms, rows, zeroed)
    seen, _ = counter_features(own, rows, table)

    assert table.penalties[code] > 0
    np.testing.assert_allclose(base[:, 1] - without[:, 1], table.penalties[code] * seen[:, 0], atol=1e-9)
    np.testing.assert_array_equal(base[:, 0], without[:, 0])


@pytest.mark.parametrize(("larger", "smaller", "group"), [("FS3", "FS5", "APC_R"), ("FS5", "FS6", "APC_V")])
def test_feature_sets_differ_by_one_group(small_log: EventLog, larger: str, smaller: str, group: str) -> None:
    rows = label_log(small_log).complete_runs()
    builder = FeatureBuilder.fit(small_log, rows)

    big = builder.materialize(larger, small_log, rows)
    small = builder.materialize(smaller, small_log, rows)
    extra = builder.block(group, small_log, rows)

    assert extra.columns
    assert set(big.columns) == set(small.columns) | set(extra.columns)
    assert not set(small.columns) & set(extra.columns)
    position = [big.columns.index(name) for name in small.columns]
    np.testing.assert_array_equal(big.values[:, position], small.values)
