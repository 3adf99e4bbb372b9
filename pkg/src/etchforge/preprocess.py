"""Per-recipe standardization, zero imputation and correlation pruning of APC sensors.

Sensor distributions are recipe-conditioned, so every value is scaled by the mean and
sample standard deviation of its own recipe before sensors are compared. Cells with no
value (sensor unused by the recipe) are set to 0 after scaling, i.e. to the recipe mean.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd

from .errors import InvalidConfig, UnknownRecipe
from .ingest import Run

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True, slots=True)
class RecipeStats:
    recipe_id: str
    mean: Mapping[str, float] = field(default_factory=dict)
    std: Mapping[str, float] = field(default_factory=dict)
    count: Mapping[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "recipe": self.recipe_id,
            "sensors": {s: [self.mean[s], self.std[s], self.count[s]] for s in sorted(self.mean)},
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> RecipeStats:
        sensors = obj["sensors"]
        return cls(
            recipe_id=str(obj["recipe"]),
            mean={s: float(v[0]) for s, v in sensors.items()},
            std={s: float(v[1]) for s, v in sensors.items()},
            count={s: int(v[2]) for s, v in sensors.items()},
        )


@dataclass(frozen=True, slots=True)
class PruneReport:
    kept: tuple[str, ...]
    dropped: tuple[tuple[str, str, float], ...]
    threshold: float
    constant: tuple[str, ...] = ()

    @property
    def dropped_names(self) -> list[str]:
        return [d[0] for d in self.dropped]

    def reduction(self) -> float:
        total = len(self.kept) + len(self.dropped)
        return len(self.dropped) / total if total else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "threshold": self.threshold,
            "kept": list(self.kept),
            "dropped": [{"sensor": s, "correlate": c, "abs_rho": r} for s, c, r in self.dropped],
            "constant": list(self.constant),
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> PruneReport:
        return cls(
            kept=tuple(obj["kept"]),
            dropped=tuple((d["sensor"], d["correlate"], float(d["abs_rho"])) for d in obj["dropped"]),
            threshold=float(obj["threshold"]),
            constant=tuple(obj.get("constant", ())),
        )


def sensor_names(runs: Iterable[Run]) -> list[str]:
    names: set[str] = set()
    for run in runs:
        names.update(run.sensors)
    return sorted(names)


def _long_frame(runs: Iterable[Run]) -> pd.DataFrame:
    rows = [
        (run.recipe_id, name, value)
        for run in runs
        for name, value in run.sensors.items()
        if value is not None
    ]
    return pd.DataFrame(rows, columns=["recipe", "sensor", "value"])


def fit_recipe_stats(runs: Sequence[Run]) -> dict[str, RecipeStats]:
    frame = _long_frame(runs)
    recipes = sorted({run.recipe_id for run in runs})
    out = {r: RecipeStats(r) for r in recipes}
    if frame.empty:
        return out
    agg = frame.groupby(["recipe", "sensor"], sort=True)["value"].agg(["mean", "std", "count"])
    agg["std"] = agg["std"].fillna(0.0)
    for recipe, block in agg.groupby(level="recipe"):
        sensors = block.index.get_level_values("sensor")
        out[recipe] = RecipeStats(
            recipe_id=recipe,
            mean=dict(zip(sensors, block["mean"].astype(float))),
            std=dict(zip(sensors, block["std"].astype(float))),
            count=dict(zip(sensors, block["count"].astype(int))),
        )
    return out


def raw_matrix(runs: Sequence[Run], sensors: Sequence[str]) -> np.ndarray:
    """Sensor values with NaN for null or absent entries."""
    out = np.full((len(runs), len(sensors)), np.nan)
    col = {name: j for j, name in enumerate(sensors)}
    for i, run in enumerate(runs):
        for name, value in run.sensors.items():
            j = col.get(name)
            if j is not None and value is not None:
                out[i, j] = value
    return out


def standardize(runs: Sequence[Run], stats: Mapping[str, RecipeStats], sensors: Sequence[str]) -> np.ndarray:
    raw = raw_matrix(runs, sensors)
    out = np.zeros_like(raw)
    recipes = np.array([run.recipe_id for run in runs], dtype=object)
    for recipe in sorted(set(recipes)):
        if recipe not in stats:
            raise UnknownRecipe(recipe)
        rs = stats[recipe]
        rows = np.flatnonzero(recipes == recipe)
        block = raw[rows]
        mean = np.array([rs.mean.get(s, np.nan) for s in sensors])
        std = np.array([rs.std.get(s, 0.0) for s in sensors])
        unseen = np.isnan(mean) & (~np.isnan(block)).any(axis=0)
        if unseen.any():
            raise UnknownRecipe(recipe, sensors[int(np.flatnonzero(unseen)[0])])
        safe = np.where(std > 0, std, 1.0)
        z = np.where(std > 0, (block - mean) / safe, 0.0)
        out[rows] = np.nan_to_num(z, nan=0.0)
    return out


def _column_corr(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centered = matrix - matrix.mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    constant = norms == 0
    unit = np.divide(centered, norms, out=np.zeros_like(centered), where=~constant)
    return np.clip(unit.T @ unit, -1.0, 1.0), constant


def prune_correlated(matrix: np.ndarray, names: Sequence[str], threshold: float = 0.95) -> PruneReport:
    if not 0.0 < threshold <= 1.0:
        raise InvalidConfig(f"correlation threshold must lie in (0, 1] (got {threshold})")
    if matrix.shape[1] != len(names):
        raise InvalidConfig(f"matrix has {matrix.shape[1]} columns for {len(names)} names")
    corr, constant = _column_corr(matrix)
    kept: list[int] = []
    dropped: list[tuple[str, str, float]] = []
    for j in range(len(names)):
        best_k, best = -1, 0.0
        if not constant[j]:
            for k in kept:
                if constant[k]:
                    continue
                rho = 1.0 if np.array_equal(matrix[:, j], matrix[:, k]) else abs(float(corr[j, k]))
                if rho >= threshold and rho > best:
                    best_k, best = k, rho
        if best_k >= 0:
            dropped.append((names[j], names[best_k], best))
        else:
            kept.append(j)
    flagged = tuple(names[j] for j in range(len(names)) if constant[j])
    if flagged:
        logger.warning("zero-variance sensor columns kept unpruned: %s", ", ".join(flagged))
    report = PruneReport(tuple(names[j] for j in kept), tuple(dropped), float(threshold), flagged)
    logger.info(
        "correlation pruning at %.3f kept %d of %d sensors (%.1f%% reduction)",
        threshold, len(report.kept), len(names), 100.0 * report.reduction(),
    )
    return report


def missing_rate(runs: Sequence[Run], sensors: Sequence[str] | None = None) -> float:
    names = sensor_names(runs) if sensors is None else list(sensors)
    cells = len(runs) * len(names)
    if cells == 0:
        return 0.0
    return float(np.isnan(raw_matrix(runs, names)).sum()) / cells


@dataclass(frozen=True, slots=True)
class FittedPreprocessor:
    """Recipe statistics and prune report fitted on one training fold."""

    sensors: tuple[str, ...]
    stats: Mapping[str, RecipeStats]
    prune: PruneReport

    @classmethod
    def fit(cls, runs: Sequence[Run], threshold: float = 0.95) -> FittedPreprocessor:
        sensors = tuple(sensor_names(runs))
        stats = fit_recipe_stats(runs)
        prune = prune_correlated(standardize(runs, stats, sensors), sensors, threshold)
        return cls(sensors, stats, prune)

    @property
    def kept(self) -> tuple[str, ...]:
        return self.prune.kept

    def transform(self, runs: Sequence[Run]) -> np.ndarray:
        """Standardized matrix restricted to the kept sensors, in kept order."""
        return standardize(runs, self.stats, self.kept)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "sensors": list(self.sensors),
            "stats": [self.stats[r].to_dict() for r in sorted(self.stats)],
            "prune": self.prune.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> FittedPreprocessor:
        stats = [RecipeStats.from_dict(s) for s in obj["stats"]]
        return cls(
            sensors=tuple(obj["sensors"]),
            stats={s.recipe_id: s for s in stats},
            prune=PruneReport.from_dict(obj["prune"]),
        )
