"""CART decision trees and bootstrap random forests.

Nodes live in flat arrays; ``feature == -1`` marks a leaf. A sample goes left when
``x[feature] <= threshold``. Thresholds are midpoints between consecutive distinct
values. The split search keeps the first best candidate in (feature, threshold) order, so
a later candidate must be strictly better to win.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

_MIN_GAIN = 1e-12


@dataclass(frozen=True, slots=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def raw(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return self.value[node]
            go_left = X[rows, np.maximum(feat, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def to_dict(self) -> dict[str, Any]:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> Tree:
        return cls(
            feature=np.asarray(obj["feature"], dtype=int),
            threshold=np.asarray(obj["threshold"], dtype=float),
            left=np.asarray(obj["left"], dtype=int),
            right=np.asarray(obj["right"], dtype=int),
            value=np.asarray(obj["value"], dtype=float),
        )


def _impurity_sums(ys: np.ndarray, criterion: str) -> tuple[np.ndarray, float]:
    """Weighted child impurity for every cut position ``1..n-1`` of sorted targets."""
    n = ys.size
    n_left = np.arange(1, n, dtype=float)
    n_right = n - n_left
    csum = np.cumsum(ys)[:-1]
    total = float(ys.sum())
    if criterion == "gini":
        p_left = csum / n_left
        p_right = (total - csum) / n_right
        child = 2.0 * (n_left * p_left * (1 - p_left) + n_right * p_right * (1 - p_right))
        p = total / n
        parent = 2.0 * n * p * (1 - p)
    else:
        csq = np.cumsum(ys * ys)[:-1]
        total_sq = float((ys * ys).sum())
        child = (csq - csum**2 / n_left) + ((total_sq - csq) - (total - csum) ** 2 / n_right)
        parent = total_sq - total**2 / n
    return child, parent


def best_split(
    X: np.ndarray, y: np.ndarray, features: Sequence[int], criterion: str, min_samples_leaf: int
) -> tuple[int, float, float] | None:
    """(feature, threshold, impurity decrease) of the best admissible cut, or None."""
    n = y.size
    if n < 2 * min_samples_leaf:
        return None
    best: tuple[int, float, float] | None = None
    for j in sorted(features):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        child, parent = _impurity_sums(ys, criterion)
        valid = xs[1:] > xs[:-1]
        positions = np.arange(1, n)
        valid &= (positions >= min_samples_leaf) & (n - positions >= min_samples_leaf)
        if not valid.any():
            continue
        cand = np.where(valid, child, np.inf)
        i = int(np.argmin(cand))
        gain = parent - float(cand[i])
        if gain > _MIN_GAIN and (best is None or gain > best[2]):
            best = (j, 0.5 * (xs[i] + xs[i + 1]), gain)
    return best


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    criterion: str = "gini",
    max_depth: int = 6,
    min_samples_leaf: int = 5,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
) -> Tree:
    """Grow a CART tree; leaves hold the mean target (positive fraction for gini)."""
    y = np.asarray(y, dtype=float)
    d = X.shape[1]
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node(rows: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[rows].mean()))
        return len(feature) - 1

    stack = [(new_node(np.arange(y.size)), np.arange(y.size), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if depth >= max_depth:
            continue
        if max_features is not None and max_features < d and rng is not None:
            candidates = rng.choice(d, size=max_features, replace=False)
        else:
            candidates = range(d)
        split = best_split(X[rows], y[rows], [int(c) for c in candidates], criterion, min_samples_leaf)
        if split is None:
            continue
        j, t, _ = split
        mask = X[rows, j] <= t
        feature[node] = j
        threshold[node] = t
        left[node] = new_node(rows[mask])
        right[node] = new_node(rows[~mask])
        stack.append((right[node], rows[~mask], depth + 1))
        stack.append((left[node], rows[mask], depth + 1))

    return Tree(
        np.asarray(feature, dtype=int),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=int),
        np.asarray(right, dtype=int),
        np.asarray(value, dtype=float),
    )


@dataclass(frozen=True, slots=True)
class Forest:
    trees: tuple[Tree, ...]
    vote: bool

    def raw(self, X: np.ndarray) -> np.ndarray:
        outs = np.stack([t.raw(X) for t in self.trees])
        if self.vote:
            outs = (outs >= 0.5).astype(float)
        return outs.mean(axis=0)

    def to_dict(self) -> dict[str, Any]:
        return {"vote": self.vote, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> Forest:
        return cls(tuple(Tree.from_dict(t) for t in obj["trees"]), bool(obj["vote"]))


def resolve_max_features(setting: Any, d: int) -> int:
    if setting == "sqrt":
        return max(1, int(np.sqrt(d)))
    if setting is None or setting == "all":
        return d
    return max(1, min(d, int(setting)))


def fit_forest(X: np.ndarray, y: np.ndarray, task: str, params: Mapping[str, Any], seed: int) -> Forest:
    n, d = X.shape
    max_features = resolve_max_features(params["max_features"], d)
    criterion = "gini" if task == "classification" else "mse"
    trees = []
    for child in np.random.SeedSequence(seed).spawn(int(params["n_estimators"])):
        rng = np.random.default_rng(child)
        rows = rng.integers(0, n, size=n)
        trees.append(
            fit_tree(
                X[rows],
                y[rows],
                criterion,
                int(params["max_depth"]),
                int(params["min_samples_leaf"]),
                max_features,
                rng,
            )
        )
    return Forest(tuple(trees), vote=task == "classification")
