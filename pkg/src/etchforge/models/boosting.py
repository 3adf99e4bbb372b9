"""Gradient boosting for binary classification under logistic loss.

Each round fits a shallow regression tree to the residuals ``y - sigmoid(F)`` and adds
``learning_rate * leaf mean`` to the score. A leaf holding n rows with residual mean m then
lowers the log-loss by at least ``n * m^2 * lr * (1 - lr / 8)``, so the training loss never
rises for learning rates below 8.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .tree import Tree, fit_tree


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def log_loss(score: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, score) - y * score))


@dataclass(frozen=True, slots=True)
class BoostState:
    init_score: float
    learning_rate: float
    max_depth: int = 2
    min_samples_leaf: int = 1
    trees: tuple[Tree, ...] = field(default=())
    train_score: np.ndarray | None = None

    @classmethod
    def start(
        cls, y: np.ndarray, learning_rate: float = 0.1, max_depth: int = 2, min_samples_leaf: int = 1
    ) -> BoostState:
        rate = float(np.clip(np.mean(y), 1e-12, 1 - 1e-12))
        init = float(np.log(rate / (1.0 - rate)))
        return cls(init, learning_rate, max_depth, min_samples_leaf, (), np.full(len(y), init))

    def raw_score(self, X: np.ndarray) -> np.ndarray:
        score = np.full(X.shape[0], self.init_score)
        for tree in self.trees:
            score += self.learning_rate * tree.raw(X)
        return score

    def raw(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.raw_score(X))

    def to_dict(self) -> dict[str, Any]:
        return {
            "init_score": self.init_score,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> BoostState:
        return cls(
            init_score=float(obj["init_score"]),
            learning_rate=float(obj["learning_rate"]),
            max_depth=int(obj["max_depth"]),
            min_samples_leaf=int(obj["min_samples_leaf"]),
            trees=tuple(Tree.from_dict(t) for t in obj["trees"]),
        )


def gbc_fit_round(state: BoostState, X: np.ndarray, y: np.ndarray) -> BoostState:
    score = state.train_score if state.train_score is not None else state.raw_score(X)
    residual = np.asarray(y, dtype=float) - _sigmoid(score)
    tree = fit_tree(X, residual, "mse", state.max_depth, state.min_samples_leaf)
    return replace(state, trees=state.trees + (tree,), train_score=score + state.learning_rate * tree.raw(X))


def fit_gbc(X: np.ndarray, y: np.ndarray, params: Mapping[str, Any]) -> BoostState:
    y = np.asarray(y, dtype=float)
    state = BoostState.start(
        y, float(params["learning_rate"]), int(params["max_depth"]), int(params["min_samples_leaf"])
    )
    for _ in range(int(params["n_rounds"])):
        state = gbc_fit_round(state, X, y)
    return replace(state, train_score=None)
