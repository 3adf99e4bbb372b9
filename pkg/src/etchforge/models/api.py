from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..errors import DegenerateTarget, InvalidModelSpec, SchemaMismatch
from ..features import FeatureMatrix
from . import mlp as _mlp
from .boosting import BoostState, fit_gbc
from .linear import LinearState, SGDState, fit_least_squares, fit_sgd
from .neighbors import KNNState, fit_knn
from .spec import ModelSpec
from .tree import Forest, Tree, fit_forest, fit_tree

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

_STATE_TYPES: dict[str, Any] = {
    "LR": LinearState,
    "SGD_SVM": SGDState,
    "TREE": Tree,
    "RF": Forest,
    "KNN": KNNState,
    "MLP": _mlp.MLPState,
    "GBC": BoostState,
}


@dataclass(frozen=True, slots=True)
class TrainedModel:
    spec: ModelSpec
    columns: tuple[str, ...]
    state: Any


@dataclass(frozen=True, slots=True)
class Prediction:
    values: np.ndarray
    labels: np.ndarray | None = None

    @property
    def scores(self) -> np.ndarray:
        return self.values


def _unpack(X: FeatureMatrix | np.ndarray, columns: Sequence[str] | None) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(X, FeatureMatrix):
        return X.values, X.columns
    values = np.asarray(X, dtype=float)
    if values.ndim != 2:
        raise InvalidModelSpec(f"expected a 2-D feature array (got shape {values.shape})")
    names = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(values.shape[1]))
    return values, names


def fit(
    spec: ModelSpec,
    X: FeatureMatrix | np.ndarray,
    y: Sequence[float] | np.ndarray,
    columns: Sequence[str] | None = None,
) -> TrainedModel:
    values, names = _unpack(X, columns)
    target = np.asarray(y, dtype=float)
    if values.shape[0] != target.size:
        raise InvalidModelSpec(f"{values.shape[0]} rows but {target.size} targets")
    if target.size < 2:
        raise DegenerateTarget(f"need at least 2 rows to fit, got {target.size}")
    if not np.isfinite(values).all() or not np.isfinite(target).all():
        raise InvalidModelSpec("features and targets must be finite")
    if spec.task == "classification":
        if not np.isin(target, (0.0, 1.0)).all():
            raise InvalidModelSpec("classification targets must be boolean")
        if target.min() == target.max():
            raise DegenerateTarget(f"all {target.size} classification targets are {bool(target[0])}")

    p = spec.params
    rng = np.random.default_rng(spec.seed)
    family = spec.family
    if family == "LR":
        state = fit_least_squares(values, target, float(p["ridge"]))
    elif family == "SGD_SVM":
        state = fit_sgd(values, target, spec.task, p, rng)
    elif family == "TREE":
        criterion = "gini" if spec.task == "classification" else "mse"
        state = fit_tree(values, target, criterion, int(p["max_depth"]), int(p["min_samples_leaf"]))
    elif family == "RF":
        state = fit_forest(values, target, spec.task, p, spec.seed)
    elif family == "KNN":
        state = fit_knn(values, target, p)
    elif family == "MLP":
        state = _mlp.fit_mlp(values, target, spec.task, p, rng)
    else:
        state = fit_gbc(values, target, p)
    logger.debug("fitted %s/%s on %d rows x %d columns", spec.label, spec.task, *values.shape)
    return TrainedModel(spec, names, state)


def _check_schema(model: TrainedModel, X: FeatureMatrix | np.ndarray, columns: Sequence[str] | None) -> np.ndarray:
    """Bare arrays without column names are taken to follow the fit-time order."""
    if isinstance(X, FeatureMatrix):
        values, names = X.values, X.columns
    else:
        values, names = _unpack(X, columns if columns is not None else model.columns)
    if names != model.columns or values.shape[1] != len(model.columns):
        raise SchemaMismatch(list(model.columns), list(names))
    return values


def _threshold(model: TrainedModel, raw: np.ndarray) -> np.ndarray:
    if model.spec.family == "SGD_SVM":
        return raw >= 0.0
    return raw >= 0.5


def predict(
    model: TrainedModel, X: FeatureMatrix | np.ndarray, columns: Sequence[str] | None = None
) -> Prediction:
    """Regression: real values. Classification: boolean labels plus the margin or probability."""
    values = _check_schema(model, X, columns)
    raw = np.asarray(model.state.raw(values), dtype=float)
    if model.spec.task == "classification":
        return Prediction(raw, _threshold(model, raw))
    return Prediction(raw)


def mlp_gradient(model: TrainedModel, X: FeatureMatrix | np.ndarray, y: Sequence[float] | np.ndarray) -> np.ndarray:
    """Backpropagated loss gradient of an MLP model as one flat vector (W1, b1, w2, b2)."""
    if model.spec.family != "MLP":
        raise InvalidModelSpec(f"mlp_gradient needs an MLP model, got {model.spec.family}")
    state: _mlp.MLPState = model.state
    values = _check_schema(model, X, None)
    Z = state.x_scaler.transform(values)
    return _mlp.gradient(state.params, Z, state.scaled_target(np.asarray(y, dtype=float)), state.task).flatten()


def model_to_dict(model: TrainedModel) -> dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "family": model.spec.family,
        "spec": model.spec.to_dict(),
        "columns": list(model.columns),
        "state": model.state.to_dict(),
    }


def model_from_dict(obj: Mapping[str, Any]) -> TrainedModel:
    version = obj.get("format_version")
    if version != FORMAT_VERSION:
        raise InvalidModelSpec(f"unsupported model format_version {version!r}")
    spec = ModelSpec.from_dict(obj["spec"])
    if obj.get("family") != spec.family:
        raise InvalidModelSpec(f"family tag {obj.get('family')!r} does not match spec {spec.family!r}")
    return TrainedModel(spec, tuple(obj["columns"]), _STATE_TYPES[spec.family].from_dict(obj["state"]))
