from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any

import numpy as np

from ._scaling import Scaler

_CHUNK = 512


@dataclass(frozen=True, slots=True)
class KNNState:
    support: np.ndarray
    labels: np.ndarray
    k: int
    scaler: Scaler

    def raw(self, X: np.ndarray) -> np.ndarray:
        """Fraction of positive labels among the k nearest training rows."""
        Z = self.scaler.transform(X)
        k = min(self.k, self.support.shape[0])
        sq_support = (self.support**2).sum(axis=1)
        out = np.empty(Z.shape[0])
        for lo in range(0, Z.shape[0], _CHUNK):
            block = Z[lo : lo + _CHUNK]
            dist = (block**2).sum(axis=1)[:, None] - 2.0 * block @ self.support.T + sq_support[None, :]
            nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
            out[lo : lo + _CHUNK] = self.labels[nearest].mean(axis=1)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "support": self.support.tolist(),
            "labels": self.labels.astype(int).tolist(),
            "scaler": self.scaler.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> KNNState:
        return cls(
            support=np.asarray(obj["support"], dtype=float),
            labels=np.asarray(obj["labels"], dtype=float),
            k=int(obj["k"]),
            scaler=Scaler.from_dict(obj["scaler"]),
        )


def fit_knn(X: np.ndarray, y: np.ndarray, params: Mapping[str, Any]) -> KNNState:
    scaler = Scaler.fit(X)
    return KNNState(scaler.transform(X), np.asarray(y, dtype=float), int(params["k"]), scaler)
