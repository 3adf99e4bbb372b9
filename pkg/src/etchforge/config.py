"""Pipeline configuration: one document, section per stage, unknown keys rejected.

Example (TOML):

    [labeling]
    min_segment_hours = 5.0
    interval_bounds = [8, 24, 72, 168, 336]

    [evaluation]
    k = 4
    seed = 42

    [[models.regression]]
    family = "RF"
    hyperparameters = { n_estimators = 50 }
"""

from __future__ import annotations

import json
import sys
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 fallback (API-identical backport)
    import tomli as tomllib

from .errors import ConfigError, InvalidConfig
from .features import FEATURE_SETS, PENALTY_SCOPES
from .labeling import DEFAULT_BOUNDS, LEADING_POLICIES, check_bounds
from .models.spec import ModelSpec
from .sim import SimConfig


@dataclass(frozen=True, slots=True)
class PathsConfig:
    input_dir: str = "data/sim"
    output_dir: str = "out"


@dataclass(frozen=True, slots=True)
class LabelingConfig:
    min_segment_hours: float = 5.0
    interval_bounds: tuple[float, ...] = DEFAULT_BOUNDS
    leading_segments: str = "censor"

    def __post_init__(self) -> None:
        if self.min_segment_hours < 0:
            raise InvalidConfig("labeling.min_segment_hours must be >= 0")
        if self.leading_segments not in LEADING_POLICIES:
            raise InvalidConfig(f"labeling.leading_segments must be one of {LEADING_POLICIES}")
        object.__setattr__(self, "interval_bounds", check_bounds(self.interval_bounds))


@dataclass(frozen=True, slots=True)
class PreprocessConfig:
    correlation_threshold: float = 0.95
    productive_recipes: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.correlation_threshold <= 1.0:
            raise InvalidConfig("preprocess.correlation_threshold must lie in (0, 1]")
        if self.productive_recipes is not None:
            object.__setattr__(self, "productive_recipes", tuple(self.productive_recipes))


@dataclass(frozen=True, slots=True)
class FeatureConfig:
    window_runs: int = 10
    epsilon_hours: float = 1.0
    penalty_scope: str = "pooled"
    feature_sets: tuple[str, ...] = tuple(FEATURE_SETS)

    def __post_init__(self) -> None:
        if self.window_runs < 1:
            raise InvalidConfig("features.window_runs must be >= 1")
        if self.epsilon_hours <= 0:
            raise InvalidConfig("features.epsilon_hours must be > 0")
        if self.penalty_scope not in PENALTY_SCOPES:
            raise InvalidConfig(f"features.penalty_scope must be one of {PENALTY_SCOPES}")
        object.__setattr__(self, "feature_sets", tuple(self.feature_sets))
        unknown = [n for n in self.feature_sets if n not in FEATURE_SETS]
        if unknown:
            raise InvalidConfig(f"features.feature_sets: unknown {unknown}")


def _default_grid(task: str, families: tuple[str, ...]) -> tuple[ModelSpec, ...]:
    return tuple(ModelSpec(f, task) for f in families)


@dataclass(frozen=True, slots=True)
class ModelGrid:
    regression: tuple[ModelSpec, ...] = field(
        default_factory=lambda: _default_grid("regression", ("LR", "SGD_SVM", "TREE", "RF", "MLP"))
    )
    classification: tuple[ModelSpec, ...] = field(
        default_factory=lambda: _default_grid("classification", ("SGD_SVM", "TREE", "RF", "KNN", "MLP", "GBC"))
    )


@dataclass(frozen=True, slots=True)
class EvaluationConfig:
    k: int = 4
    seed: int = 42
    chambers: tuple[str, ...] | None = None
    degradation_threshold: float = 0.1
    tasks: tuple[str, ...] = ("ttf_regression", "health_regression", "interval_classification")

    def __post_init__(self) -> None:
        if self.k < 2:
            raise InvalidConfig("evaluation.k must be >= 2")
        if self.seed < 0:
            raise InvalidConfig("evaluation.seed must be >= 0")
        if self.chambers is not None:
            object.__setattr__(self, "chambers", tuple(self.chambers))
        object.__setattr__(self, "tasks", tuple(self.tasks))


@dataclass(frozen=True, slots=True)
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    labeling: LabelingConfig = field(default_factory=LabelingConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    models: ModelGrid = field(default_factory=ModelGrid)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            section = getattr(self, f.name)
            if f.name == "models":
                out["models"] = {
                    "regression": [s.to_dict() for s in section.regression],
                    "classification": [s.to_dict() for s in section.classification],
                }
            else:
                out[f.name] = _plain(asdict(section))
        return out


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def load_mapping(path: str | Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    suffix = path.suffix.lower()
    if suffix == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
    elif suffix == ".toml":
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    elif suffix in {".yml", ".yaml"}:
        try:
            import yaml  # type: ignore
        except ImportError as exc:
            raise ConfigError(
                "YAML config requested but PyYAML is not installed. Either install it or use JSON/TOML."
            ) from exc
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    else:
        raise ConfigError(f"unsupported config format: {path.suffix}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return dict(data)


def _section(cls: type, raw: Any, name: str) -> Any:
    if not isinstance(raw, Mapping):
        raise ConfigError(f"[{name}] must be a mapping")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {', '.join(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def _grid(raw: Any) -> ModelGrid:
    if not isinstance(raw, Mapping):
        raise ConfigError("[models] must be a mapping")
    unknown = sorted(set(raw) - {"regression", "classification"})
    if unknown:
        raise ConfigError(f"[models] unknown keys: {', '.join(unknown)}")
    grid = ModelGrid()
    out = {}
    for task in ("regression", "classification"):
        if task not in raw:
            out[task] = getattr(grid, task)
            continue
        try:
            out[task] = tuple(ModelSpec.from_dict(item, task=task) for item in raw[task])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[models.{task}] {exc}") from exc
    return ModelGrid(**out)


_SECTIONS: dict[str, type] = {
    "paths": PathsConfig,
    "sim": SimConfig,
    "labeling": LabelingConfig,
    "preprocess": PreprocessConfig,
    "features": FeatureConfig,
    "evaluation": EvaluationConfig,
}


def from_mapping(data: Mapping[str, Any]) -> PipelineConfig:
    unknown = sorted(set(data) - set(_SECTIONS) - {"models"})
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    parts = {name: _section(cls, data[name], name) for name, cls in _SECTIONS.items() if name in data}
    if "models" in data:
        parts["models"] = _grid(data["models"])
    return PipelineConfig(**parts)


def load_config(path: str | Path | None) -> PipelineConfig:
    return from_mapping(load_mapping(path))


def apply_overrides(config: PipelineConfig, section: str, overrides: Mapping[str, Any]) -> PipelineConfig:
    """Replace fields of one section, skipping overrides left unset (None)."""
    clean = {k: v for k, v in overrides.items() if v is not None}
    if not clean:
        return config
    current = getattr(config, section)
    allowed = {f.name for f in fields(current)}
    unknown = sorted(set(clean) - allowed)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(unknown)}")
    try:
        return replace(config, **{section: replace(current, **clean)})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc
