"""Least-squares regression and SGD-trained linear SVM / SVR."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ._scaling import Scaler, optional_scaler


@dataclass(frozen=True, slots=True)
class LinearState:
    intercept: float
    coef: np.ndarray

    def raw(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coef + self.intercept

    def to_dict(self) -> dict[str, Any]:
        return {"intercept": self.intercept, "coef": self.coef.tolist()}

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> LinearState:
        return cls(float(obj["intercept"]), np.asarray(obj["coef"], dtype=float))


def fit_least_squares(X: np.ndarray, y: np.ndarray, ridge: float = 1e-8) -> LinearState:
    """Normal equations on centered data; the intercept is left undamped."""
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    gram = Xc.T @ Xc + ridge * np.eye(X.shape[1])
    coef = np.linalg.solve(gram, Xc.T @ (y - y_mean))
    return LinearState(y_mean - float(x_mean @ coef), coef)


@dataclass(frozen=True, slots=True)
class SGDState:
    coef: np.ndarray
    intercept: float
    loss: str
    x_scaler: Scaler
    y_scaler: Scaler | None = None
    history: tuple[float, ...] = field(default=())

    def raw(self, X: np.ndarray) -> np.ndarray:
        out = self.x_scaler.transform(X) @ self.coef + self.intercept
        return out if self.y_scaler is None else self.y_scaler.inverse(out)

    def to_dict(self) -> dict[str, Any]:
        return {
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "loss": self.loss,
            "x_scaler": self.x_scaler.to_dict(),
            "y_scaler": None if self.y_scaler is None else self.y_scaler.to_dict(),
            "history": list(self.history),
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> SGDState:
        return cls(
            coef=np.asarray(obj["coef"], dtype=float),
            intercept=float(obj["intercept"]),
            loss=str(obj["loss"]),
            x_scaler=Scaler.from_dict(obj["x_scaler"]),
            y_scaler=optional_scaler(obj.get("y_scaler")),
            history=tuple(obj.get("history", ())),
        )


def hinge_objective(coef: np.ndarray, intercept: float, X: np.ndarray, y_pm: np.ndarray, alpha: float) -> float:
    margins = y_pm * (X @ coef + intercept)
    return float(np.maximum(0.0, 1.0 - margins).mean() + 0.5 * alpha * coef @ coef)


def epsilon_objective(
    coef: np.ndarray, intercept: float, X: np.ndarray, y: np.ndarray, alpha: float, epsilon: float
) -> float:
    resid = np.abs(X @ coef + intercept - y)
    return float(np.maximum(0.0, resid - epsilon).mean() + 0.5 * alpha * coef @ coef)


def fit_sgd(X: np.ndarray, y: np.ndarray, task: str, params: Mapping[str, Any], rng: np.random.Generator) -> SGDState:
    """Mini-batch subgradient descent, step size ``eta0 / t ** power_t`` over batches t = 1, 2, ..."""
    x_scaler = Scaler.fit(X)
    Z = x_scaler.transform(X)
    if task == "classification":
        y_scaler = None
        target = np.where(y, 1.0, -1.0)
        loss = "hinge"
    else:
        y_scaler = Scaler.fit(y)
        target = y_scaler.transform(y)
        loss = "epsilon_insensitive"

    alpha = float(params["alpha"])
    epsilon = float(params["epsilon"])
    eta0 = float(params["eta0"])
    power = float(params["power_t"])
    batch = int(params["batch_size"])
    n, d = Z.shape
    coef = np.zeros(d)
    intercept = 0.0
    step = 0
    history = []
    for _ in range(int(params["epochs"])):
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            idx = order[lo : lo + batch]
            Zb, tb = Z[idx], target[idx]
            out = Zb @ coef + intercept
            if loss == "hinge":
                active = tb * out < 1.0
                g_out = np.where(active, -tb, 0.0)
            else:
                resid = out - tb
                g_out = np.where(np.abs(resid) > epsilon, np.sign(resid), 0.0)
            step += 1
            eta = eta0 / step**power
            coef = coef - eta * (Zb.T @ g_out / len(idx) + alpha * coef)
            intercept -= eta * float(g_out.mean())
        if loss == "hinge":
            history.append(hinge_objective(coef, intercept, Z, target, alpha))
        else:
            history.append(epsilon_objective(coef, intercept, Z, target, alpha, epsilon))
    return SGDState(coef, intercept, loss, x_scaler, y_scaler, tuple(history))
