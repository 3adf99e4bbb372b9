"""One-hidden-layer tanh perceptron trained by mini-batch SGD.

Forward pass for inputs X (n x d):

    H   = tanh(X W1^T + b1)                 hidden activations (n x h)
    out = H w2 + b2                         linear output (n,)

Regression minimizes 0.5 * mean((out - y)^2); classification minimizes the mean
log-loss of sigmoid(out). Both losses share ``d loss / d out = (prediction - y) / n``.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ._scaling import Scaler, optional_scaler


@dataclass(frozen=True, slots=True)
class MLPParams:
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator) -> MLPParams:
        return cls(
            W1=rng.uniform(-1.0, 1.0, size=(hidden, d)) / np.sqrt(d),
            b1=np.zeros(hidden),
            w2=rng.uniform(-1.0, 1.0, size=hidden) / np.sqrt(hidden),
            b2=0.0,
        )

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.w2, [self.b2]])

    @classmethod
    def unflatten(cls, flat: np.ndarray, d: int, hidden: int) -> MLPParams:
        i = hidden * d
        return cls(
            W1=flat[:i].reshape(hidden, d),
            b1=flat[i : i + hidden],
            w2=flat[i + hidden : i + 2 * hidden],
            b2=float(flat[i + 2 * hidden]),
        )

    def to_dict(self) -> dict[str, Any]:
        return {"W1": self.W1.tolist(), "b1": self.b1.tolist(), "w2": self.w2.tolist(), "b2": self.b2}

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> MLPParams:
        return cls(
            W1=np.asarray(obj["W1"], dtype=float).reshape(len(obj["b1"]), -1),
            b1=np.asarray(obj["b1"], dtype=float),
            w2=np.asarray(obj["w2"], dtype=float),
            b2=float(obj["b2"]),
        )


def forward(params: MLPParams, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hidden = np.tanh(X @ params.W1.T + params.b1)
    return hidden, hidden @ params.w2 + params.b2


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def loss(params: MLPParams, X: np.ndarray, y: np.ndarray, task: str) -> float:
    _, out = forward(params, X)
    if task == "classification":
        return float(np.mean(np.logaddexp(0.0, out) - y * out))
    return float(0.5 * np.mean((out - y) ** 2))


def gradient(params: MLPParams, X: np.ndarray, y: np.ndarray, task: str) -> MLPParams:
    hidden, out = forward(params, X)
    pred = sigmoid(out) if task == "classification" else out
    g_out = (pred - y) / X.shape[0]
    g_hidden = np.outer(g_out, params.w2) * (1.0 - hidden**2)
    return MLPParams(
        W1=g_hidden.T @ X,
        b1=g_hidden.sum(axis=0),
        w2=hidden.T @ g_out,
        b2=float(g_out.sum()),
    )


@dataclass(frozen=True, slots=True)
class MLPState:
    params: MLPParams
    task: str
    x_scaler: Scaler
    y_scaler: Scaler | None = None
    history: tuple[float, ...] = field(default=())

    def raw(self, X: np.ndarray) -> np.ndarray:
        _, out = forward(self.params, self.x_scaler.transform(X))
        if self.task == "classification":
            return sigmoid(out)
        return out if self.y_scaler is None else self.y_scaler.inverse(out)

    def scaled_target(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return y if self.y_scaler is None else self.y_scaler.transform(y)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "params": self.params.to_dict(),
            "x_scaler": self.x_scaler.to_dict(),
            "y_scaler": None if self.y_scaler is None else self.y_scaler.to_dict(),
            "history": list(self.history),
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> MLPState:
        return cls(
            params=MLPParams.from_dict(obj["params"]),
            task=str(obj["task"]),
            x_scaler=Scaler.from_dict(obj["x_scaler"]),
            y_scaler=optional_scaler(obj.get("y_scaler")),
            history=tuple(obj.get("history", ())),
        )


def sgd_step(params: MLPParams, X: np.ndarray, y: np.ndarray, task: str, learning_rate: float) -> MLPParams:
    g = gradient(params, X, y, task)
    return MLPParams(
        W1=params.W1 - learning_rate * g.W1,
        b1=params.b1 - learning_rate * g.b1,
        w2=params.w2 - learning_rate * g.w2,
        b2=params.b2 - learning_rate * g.b2,
    )


def fit_mlp(X: np.ndarray, y: np.ndarray, task: str, hp: Mapping[str, Any], rng: np.random.Generator) -> MLPState:
    x_scaler = Scaler.fit(X)
    Z = x_scaler.transform(X)
    if task == "classification":
        y_scaler = None
        target = np.asarray(y, dtype=float)
    else:
        y_scaler = Scaler.fit(y)
        target = y_scaler.transform(np.asarray(y, dtype=float))
    params = MLPParams.init(Z.shape[1], int(hp["hidden"]), rng)
    lr = float(hp["learning_rate"])
    batch = int(hp["batch_size"])
    history = []
    for _ in range(int(hp["epochs"])):
        order = rng.permutation(Z.shape[0])
        for lo in range(0, Z.shape[0], batch):
            idx = order[lo : lo + batch]
            params = sgd_step(params, Z[idx], target[idx], task, lr)
        history.append(loss(params, Z, target, task))
    return MLPState(params, task, x_scaler, y_scaler, tuple(history))
