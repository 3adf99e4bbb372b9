from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etchforge.errors import InvalidConfig, UnknownRecipe
from etchforge.ingest import EventLog, Run
from etchforge.preprocess import (
    FittedPreprocessor,
    fit_recipe_stats,
    missing_rate,
    prune_correlated,
    raw_matrix,
    sensor_names,
    standardize,
)


def test_recipe_stats_skip_nulls(tiny_log: EventLog) -> None:
    stats = fit_recipe_stats(tiny_log.runs)

    r1 = stats["R1"]
    assert r1.count["s0"] == 3
    assert r1.count["s2"] == 2
    assert r1.mean["s0"] == pytest.approx((2.0 + 5.0 + 7.0) / 3)
    assert r1.std["s2"] == pytest.approx(np.std([0.3, 0.2], ddof=1))


def test_standardize_is_per_recipe(tiny_log: EventLog) -> None:
    runs = list(tiny_log.runs)
    sensors = sensor_names(runs)
    stats = fit_recipe_stats(runs)

    z = standardize(runs, stats, sensors)

    recipes = np.array([r.recipe_id for r in runs])
    for recipe in ("R0", "R1"):
        block = z[recipes == recipe, sensors.index("s0")]
        assert block.mean() == pytest.approx(0.0, abs=1e-12)
        assert block.std(ddof=1) == pytest.approx(1.0)
    r1_index = [r.run_id for r in runs].index("r1")
    assert z[r1_index, sensors.index("s2")] == 0.0


def test_standardize_rejects_unseen_recipe(tiny_log: EventLog) -> None:
    stats = fit_recipe_stats([r for r in tiny_log.runs if r.recipe_id == "R0"])

    with pytest.raises(UnknownRecipe) as info:
        standardize(tiny_log.runs, stats, ["s0"])

    assert info.value.recipe_id == "R1"


def test_standardize_rejects_sensor_without_statistics() -> None:
    train = [Run("C1", "a", "R0", 0.0, 1.0, {"s0": 1.0}), Run("C1", "b", "R0", 2.0, 1.0, {"s0": 2.0})]
    test = [Run("C1", "c", "R0", 4.0, 1.0, {"s0": 1.5, "s9": 3.0})]

    with pytest.raises(UnknownRecipe) as info:
        standardize(test, fit_recipe_stats(train), ["s0", "s9"])

    assert info.value.sensor == "s9"


def test_prune_keeps_first_of_a_correlated_pair() -> None:
    rng = np.random.default_rng(0)
    a = rng.normal(size=200)
    b = rng.normal(size=200)
    matrix = np.column_stack([a, b, 2.0 * a + 1.0, -b + 1e-3 * rng.normal(size=200)])

    report = prune_correlated(matrix, ["a", "b", "a2", "nb"], 0.95)

    assert report.kept == ("a", "b")
    assert report.dropped_names == ["a2", "nb"]
    assert report.dropped[0][1] == "a"
    assert report.dropped[1][1] == "b"
    assert report.reduction() == pytest.approx(0.5)


def test_exact_duplicate_is_always_dropped() -> None:
    col = np.array([0.0, 1.0, 0.0, 1.0])

    report = prune_correlated(np.column_stack([col, col]), ["x", "y"], 1.0)

    assert report.kept == ("x",)
    assert report.dropped == (("y", "x", 1.0),)


def test_constant_columns_are_kept_and_flagged() -> None:
    matrix = np.column_stack([np.zeros(5), np.arange(5.0), np.zeros(5)])

    report = prune_correlated(matrix, ["c1", "x", "c2"])

    assert report.kept == ("c1", "x", "c2")
    assert report.constant == ("c1", "c2")


def test_prune_threshold_must_be_in_unit_interval() -> None:
    with pytest.raises(InvalidConfig):
        prune_correlated(np.zeros((3, 1)), ["x"], 0.0)


def test_fitted_preprocessor_transforms_kept_columns(tiny_log: EventLog) -> None:
    prep = FittedPreprocessor.fit(list(tiny_log.runs))

    z = prep.transform(list(tiny_log.runs))

    assert "s1" not in prep.kept
    assert z.shape == (7, len(prep.kept))
    assert FittedPreprocessor.from_dict(prep.to_dict()) == prep


def test_missing_rate(tiny_log: EventLog) -> None:
    assert missing_rate(tiny_log.runs) == pytest.approx(1 / 21)
    assert np.isnan(raw_matrix(tiny_log.runs, ["s2"])[1, 0])


@given(
    st.lists(
        st.tuples(st.sampled_from(["R0", "R1"]), st.floats(min_value=-1e3, max_value=1e3)),
        min_size=4,
        max_size=40,
    )
)
def test_standardized_groups_have_unit_moments(rows: list[tuple[str, float]]) -> None:
    runs = [Run("C1", f"r{i}", recipe, float(i), 1.0, {"s0": value}) for i, (recipe, value) in enumerate(rows)]
    stats = fit_recipe_stats(runs)

    z = standardize(runs, stats, ["s0"])[:, 0]

    recipes = np.array([r for r, _ in rows])
    for recipe in ("R0", "R1"):
        block = z[recipes == recipe]
        if block.size < 2 or stats[recipe].std["s0"] < 1e-6 * max(1.0, abs(stats[recipe].mean["s0"])):
            continue
        assert abs(block.mean()) < 1e-9
        assert abs(block.std(ddof=1) - 1.0) < 1e-9


@given(st.integers(min_value=0, max_value=10_000), st.floats(min_value=0.5, max_value=1.0))
def test_appending_a_column_keeps_earlier_decisions(seed: int, threshold: float) -> None:
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(30, 4))
    base[:, 3] = base[:, 0] * 3.0
    extra = np.column_stack([base, rng.normal(size=30)])

    before = prune_correlated(base, ["a", "b", "c", "d"], threshold)
    after = prune_correlated(extra, ["a", "b", "c", "d", "e"], threshold)

    assert after.kept[: len(before.kept)] == before.kept
    assert after.dropped[: len(before.dropped)] == before.dropped
