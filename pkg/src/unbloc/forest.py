"""Random forest of Gini CART trees grown to purity on bootstrap samples."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_features: Optional[int] = None  # None -> ceil(sqrt(M))
    bootstrap: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError(f"need at least one tree, got {self.n_trees}")


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    proba: np.ndarray  # (n_nodes, n_classes)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.intp)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            r, n, ff = rows[inner], node[inner], f[inner]
            go_left = X[r, ff] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.proba[self.apply(X)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "proba")}

    @classmethod
    def from_dict(cls, doc: dict) -> "Tree":
        return cls(
            np.asarray(doc["feature"], dtype=np.intp),
            np.asarray(doc["threshold"], dtype=float),
            np.asarray(doc["left"], dtype=np.intp),
            np.asarray(doc["right"], dtype=np.intp),
            np.asarray(doc["proba"], dtype=float),
        )


def grow_tree(
    X: np.ndarray, y: np.ndarray, sample: np.ndarray, n_classes: int, max_features: int, rng: np.random.Generator, backend=None
) -> Tree:
    """Grow one tree on row indices ``sample`` (duplicates allowed) of ``X``."""
    impl = kernels.get_backend(backend)
    M = X.shape[1]
    feature, threshold, left, right, proba = [], [], [], [], []

    def new_node(idx):
        counts = np.bincount(y[idx], minlength=n_classes).astype(float)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        proba.append(counts / counts.sum())
        return len(feature) - 1

    stack = [(new_node(sample), sample)]
    while stack:
        nid, idx = stack.pop()
        if np.count_nonzero(proba[nid]) <= 1:
            continue
        order = rng.permutation(M).astype(np.intp)
        f, t, _ = impl.best_split(X, idx, y, order, max_features, n_classes)
        if f < 0:
            continue
        go_left = X[idx, f] <= t
        li, ri = idx[go_left], idx[~go_left]
        feature[nid], threshold[nid] = f, t
        left[nid] = new_node(li)
        right[nid] = new_node(ri)
        stack.append((right[nid], ri))
        stack.append((left[nid], li))
    return Tree(
        np.asarray(feature, dtype=np.intp),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.intp),
        np.asarray(right, dtype=np.intp),
        np.vstack(proba),
    )


def tree_rng(seed: int, i: int) -> np.random.Generator:
    # per-tree streams: tree i is identical whatever n_trees is
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))


@dataclass
class RandomForest:
    classes: tuple[int, ...]
    trees: list[Tree]

    @classmethod
    def fit(cls, X: np.ndarray, labels: np.ndarray, config: ForestConfig, backend=None) -> "RandomForest":
        X = np.ascontiguousarray(X, dtype=float)
        labels = np.asarray(labels)
        classes = tuple(int(c) for c in np.unique(labels))
        y = np.searchsorted(np.asarray(classes), labels).astype(np.intp)
        n, M = X.shape
        mf = config.max_features or math.ceil(math.sqrt(M))
        mf = max(1, min(mf, M))
        trees = []
        for i in range(config.n_trees):
            rng = tree_rng(config.rng_seed, i)
            if config.bootstrap:
                sample = np.sort(rng.integers(0, n, n)).astype(np.intp)
            else:
                sample = np.arange(n, dtype=np.intp)
            trees.append(grow_tree(X, y, sample, len(classes), mf, rng, backend))
        return cls(classes, trees)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        total = np.zeros((len(X), len(self.classes)))
        for t in self.trees:
            total += t.predict_proba(X)
        return total / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.classes)[np.argmax(self.predict_proba(X), axis=1)]

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, doc: dict) -> "RandomForest":
        return cls(tuple(doc["classes"]), [Tree.from_dict(t) for t in doc["trees"]])
