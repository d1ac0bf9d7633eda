"""RBF-kernel support vector classifier trained by SMO, one-vs-one for multiclass."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np

from . import kernels


def rbf_kernel(a, b, sigma2: float) -> float:
    """Gaussian similarity ``exp(-||a - b||^2 / (2 sigma2))``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"vector lengths differ: {a.shape} vs {b.shape}")
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    d = a - b
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma2)))


def rbf_matrix(A: np.ndarray, B: np.ndarray, sigma2: float) -> np.ndarray:
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-np.maximum(sq, 0.0) / (2.0 * sigma2))


@dataclass(frozen=True)
class SvmConfig:
    sigma2: Optional[float] = None  # None -> M / 2
    c_penalty: float = 1.0
    tol: float = 1e-3
    max_iter: Optional[int] = None  # None -> max(10 n, 10000)
    standardize: bool = True

    def __post_init__(self):
        if self.sigma2 is not None and not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not self.c_penalty > 0:
            raise ValueError(f"C must be positive, got {self.c_penalty}")


@dataclass
class BinarySvm:
    """Decision ``sum(coef * K(sv, x)) - rho``; positive votes for ``pos_class``."""

    pos_class: int
    neg_class: int
    support: np.ndarray
    coef: np.ndarray
    rho: float
    alpha: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    n_iter: int = 0

    def decision(self, Z: np.ndarray, sigma2: float) -> np.ndarray:
        if len(self.support) == 0:
            return np.full(len(Z), -self.rho)
        return rbf_matrix(Z, self.support, sigma2) @ self.coef - self.rho


def fit_binary(
    Z: np.ndarray, y: np.ndarray, sigma2: float, C: float, tol: float, max_iter: Optional[int] = None, backend=None
) -> tuple[np.ndarray, float, int]:
    """Solve one two-class dual on standardized rows ``Z`` with labels ``y`` in {-1, +1}."""
    K = rbf_matrix(Z, Z, sigma2)
    Q = np.ascontiguousarray((y[:, None] * y[None, :]) * K)
    if max_iter is None:
        max_iter = max(10 * len(y), 10_000)
    impl = kernels.get_backend(backend)
    alpha, rho, it = impl.smo_solve(Q, np.ascontiguousarray(y, dtype=float), float(C), float(tol), int(max_iter))
    return np.asarray(alpha), float(rho), int(it)


@dataclass
class SvmModel:
    classes: tuple[int, ...]
    sigma2: float
    mean: np.ndarray
    scale: np.ndarray
    machines: list[BinarySvm]

    @classmethod
    def fit(cls, X: np.ndarray, labels: np.ndarray, config: SvmConfig, backend=None) -> "SvmModel":
        X = np.asarray(X, dtype=float)
        labels = np.asarray(labels)
        classes = tuple(int(c) for c in np.unique(labels))
        sigma2 = config.sigma2 if config.sigma2 is not None else X.shape[1] / 2.0
        if config.standardize:
            mean = X.mean(axis=0)
            scale = X.std(axis=0)
            scale[scale == 0] = 1.0
        else:
            mean = np.zeros(X.shape[1])
            scale = np.ones(X.shape[1])
        Z = (X - mean) / scale
        machines = []
        for a, b in combinations(classes, 2):
            mask = (labels == a) | (labels == b)
            Zab = np.ascontiguousarray(Z[mask])
            y = np.where(labels[mask] == a, 1.0, -1.0)
            alpha, rho, it = fit_binary(Zab, y, sigma2, config.c_penalty, config.tol, config.max_iter, backend)
            sv = alpha > 0
            machines.append(BinarySvm(a, b, Zab[sv], (alpha * y)[sv], rho, alpha, y, it))
        return cls(classes, float(sigma2), mean, scale, machines)

    def votes(self, X: np.ndarray) -> np.ndarray:
        Z = (np.atleast_2d(np.asarray(X, dtype=float)) - self.mean) / self.scale
        pos = {c: i for i, c in enumerate(self.classes)}
        V = np.zeros((len(Z), len(self.classes)), dtype=int)
        rows = np.arange(len(Z))
        for m in self.machines:
            win = np.where(m.decision(Z, self.sigma2) > 0, pos[m.pos_class], pos[m.neg_class])
            np.add.at(V, (rows, win), 1)
        return V

    def predict(self, X: np.ndarray) -> np.ndarray:
        # argmax keeps the lowest class on vote ties
        return np.asarray(self.classes)[np.argmax(self.votes(X), axis=1)]

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "sigma2": self.sigma2,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "machines": [
                {"pos": m.pos_class, "neg": m.neg_class, "support": m.support.tolist(), "coef": m.coef.tolist(), "rho": m.rho}
                for m in self.machines
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SvmModel":
        machines = []
        for m in doc["machines"]:
            sup = np.asarray(m["support"], dtype=float).reshape(-1, len(doc["mean"]))
            coef = np.asarray(m["coef"], dtype=float)
            machines.append(BinarySvm(m["pos"], m["neg"], sup, coef, float(m["rho"]), np.abs(coef), np.sign(coef)))
        return cls(tuple(doc["classes"]), float(doc["sigma2"]), np.asarray(doc["mean"]), np.asarray(doc["scale"]), machines)
