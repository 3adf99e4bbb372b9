from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

from ..errors import InvalidModelSpec

FAMILIES = ("LR", "SGD_SVM", "TREE", "RF", "KNN", "MLP", "GBC")
TASKS = ("regression", "classification")
_INTEGER_PARAMS = frozenset(
    {"epochs", "batch_size", "max_depth", "min_samples_leaf", "n_estimators", "k", "hidden", "n_rounds"}
)

SUPPORTED_TASKS: dict[str, tuple[str, ...]] = {
    "LR": ("regression",),
    "SGD_SVM": TASKS,
    "TREE": TASKS,
    "RF": TASKS,
    "KNN": ("classification",),
    "MLP": TASKS,
    "GBC": ("classification",),
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "LR": {"ridge": 1e-8},
    "SGD_SVM": {
        "alpha": 1e-4,
        "epsilon": 0.1,
        "epochs": 50,
        "eta0": 0.01,
        "power_t": 0.25,
        "batch_size": 32,
    },
    "TREE": {"max_depth": 6, "min_samples_leaf": 5},
    "RF": {"n_estimators": 100, "max_depth": 6, "min_samples_leaf": 5, "max_features": "sqrt"},
    "KNN": {"k": 5},
    "MLP": {"hidden": 32, "learning_rate": 0.01, "epochs": 200, "batch_size": 32},
    "GBC": {"n_rounds": 100, "learning_rate": 0.1, "max_depth": 2, "min_samples_leaf": 1},
}

STOCHASTIC = frozenset({"SGD_SVM", "RF", "MLP"})


@dataclass(frozen=True, slots=True)
class ModelSpec:
    family: str
    task: str
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 42

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise InvalidModelSpec(f"unknown model family {self.family!r} (known: {', '.join(FAMILIES)})")
        if self.task not in TASKS:
            raise InvalidModelSpec(f"unknown task {self.task!r}")
        if self.task not in SUPPORTED_TASKS[self.family]:
            raise InvalidModelSpec(f"{self.family} does not support {self.task}")
        unknown = sorted(set(self.hyperparameters) - set(DEFAULTS[self.family]))
        if unknown:
            raise InvalidModelSpec(f"{self.family}: unknown hyperparameters {unknown}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise InvalidModelSpec(f"seed must be an unsigned integer (got {self.seed!r})")
        for key, value in self.params.items():
            if key in _INTEGER_PARAMS:
                if isinstance(value, bool) or not isinstance(value, int) or value < (0 if key == "n_rounds" else 1):
                    raise InvalidModelSpec(f"{self.family}.{key} must be a positive integer (got {value!r})")

    @property
    def params(self) -> dict[str, Any]:
        return {**DEFAULTS[self.family], **self.hyperparameters}

    @property
    def label(self) -> str:
        if not self.hyperparameters:
            return self.family
        tail = ",".join(f"{k}={v}" for k, v in sorted(self.hyperparameters.items()))
        return f"{self.family}[{tail}]"

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family,
            "task": self.task,
            "hyperparameters": dict(sorted(self.hyperparameters.items())),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any], task: str | None = None) -> ModelSpec:
        if not isinstance(obj, Mapping) or "family" not in obj:
            raise InvalidModelSpec(f"model spec needs a 'family' field (got {obj!r})")
        unknown = sorted(set(obj) - {"family", "task", "hyperparameters", "seed"})
        if unknown:
            raise InvalidModelSpec(f"unknown model spec keys {unknown}")
        return cls(
            family=str(obj["family"]),
            task=str(obj.get("task", task or "")),
            hyperparameters=dict(obj.get("hyperparameters", {})),
            seed=obj.get("seed", 42),
        )
