"""Model zoo with one fit/predict contract across all families."""

from .api import Prediction, TrainedModel, fit, mlp_gradient, model_from_dict, model_to_dict, predict
from .boosting import BoostState, gbc_fit_round
from .spec import DEFAULTS, FAMILIES, SUPPORTED_TASKS, TASKS, ModelSpec

__all__ = [
    "DEFAULTS",
    "FAMILIES",
    "SUPPORTED_TASKS",
    "TASKS",
    "BoostState",
    "ModelSpec",
    "Prediction",
    "TrainedModel",
    "fit",
    "gbc_fit_round",
    "mlp_gradient",
    "model_from_dict",
    "model_to_dict",
    "predict",
]
