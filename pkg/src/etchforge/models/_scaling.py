from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any

import numpy as np


@dataclass(frozen=True, slots=True)
class Scaler:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> Scaler:
        values = np.asarray(values, dtype=float)
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        return cls(np.atleast_1d(mean), np.atleast_1d(np.where(std > 0, std, 1.0)))

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.scale

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.scale + self.mean

    def to_dict(self) -> dict[str, Any]:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> Scaler:
        return cls(np.asarray(obj["mean"], dtype=float), np.asarray(obj["scale"], dtype=float))


def optional_scaler(obj: Mapping[str, Any] | None) -> Scaler | None:
    return None if obj is None else Scaler.from_dict(obj)
