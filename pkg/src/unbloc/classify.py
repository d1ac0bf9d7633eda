"""Fingerprint classifiers and the online retraining loop.

GSN messages keep each class's ring buffer current; SN messages are classified
by the latest model, which is rebuilt from the buffers every ``train_period``
seconds.
"""
from __future__ import annotations

import enum
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

from .dataset import DEFAULT_FILL, FingerprintMatrix, MessageRecord
from .forest import ForestConfig, RandomForest
from .geo import ClassPartition
from .svm import SvmConfig, SvmModel, rbf_kernel  # noqa: F401  (re-export)

log = logging.getLogger(__name__)

MODEL_FORMAT = "unbloc-model"
MODEL_VERSION = 1


class Algorithm(str, enum.Enum):
    KNN = "kNN"
    SVM = "SVM"
    RF = "RandomForest"

    @classmethod
    def parse(cls, name: Union[str, "Algorithm"]) -> "Algorithm":
        if isinstance(name, Algorithm):
            return name
        key = name.strip().lower()
        aliases = {"knn": cls.KNN, "k-nn": cls.KNN, "svm": cls.SVM, "rf": cls.RF, "rndf": cls.RF, "randomforest": cls.RF, "forest": cls.RF}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown algorithm {name!r}") from None


@dataclass(frozen=True)
class KnnConfig:
    k: int = 11

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass
class KnnModel:
    rows: np.ndarray
    labels: np.ndarray
    k: int

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.labels))

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        classes = np.asarray(self.classes)
        lab = np.searchsorted(classes, self.labels)
        k = min(self.k, len(self.rows))
        out = np.empty(len(X), dtype=int)
        for n, x in enumerate(X):
            d = ((self.rows - x) ** 2).sum(axis=1)
            nearest = np.lexsort((lab, d))[:k]
            votes = np.bincount(lab[nearest], minlength=len(classes))
            out[n] = classes[int(np.argmax(votes))]
        return out

    def to_dict(self) -> dict:
        return {"rows": self.rows.tolist(), "labels": self.labels.tolist(), "k": self.k}

    @classmethod
    def from_dict(cls, doc: dict) -> "KnnModel":
        return cls(np.asarray(doc["rows"], dtype=float), np.asarray(doc["labels"], dtype=int), int(doc["k"]))


Config = Union[KnnConfig, SvmConfig, ForestConfig]
_DEFAULT_CONFIG = {Algorithm.KNN: KnnConfig, Algorithm.SVM: SvmConfig, Algorithm.RF: ForestConfig}
_MODEL_TYPE = {Algorithm.KNN: KnnModel, Algorithm.SVM: SvmModel, Algorithm.RF: RandomForest}


@dataclass
class TrainedClassifier:
    algorithm: Algorithm
    model: Union[KnnModel, SvmModel, RandomForest]
    feature_count: int
    class_count: int
    train_timestamp: float
    config: dict = field(default_factory=dict)

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.feature_count:
            raise ValueError(f"model expects {self.feature_count} features, got {X.shape[1]}")
        return self.model.predict(X)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "algorithm": self.algorithm.value,
            "feature_count": self.feature_count,
            "class_count": self.class_count,
            "train_timestamp": self.train_timestamp,
            "config": self.config,
            "payload": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainedClassifier":
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model document {doc.get('format')!r} v{doc.get('version')}")
        algo = Algorithm(doc["algorithm"])
        return cls(
            algo,
            _MODEL_TYPE[algo].from_dict(doc["payload"]),
            int(doc["feature_count"]),
            int(doc["class_count"]),
            float(doc["train_timestamp"]),
            dict(doc.get("config", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "TrainedClassifier":
        return cls.from_dict(json.loads(text))


def train_arrays(algorithm, config: Optional[Config], X: np.ndarray, labels: np.ndarray, backend=None) -> TrainedClassifier:
    """Fit a classifier on a stacked training matrix ``X`` with class ids ``labels``."""
    algo = Algorithm.parse(algorithm)
    config = config if config is not None else _DEFAULT_CONFIG[algo]()
    if not isinstance(config, _DEFAULT_CONFIG[algo]):
        raise TypeError(f"{algo.value} expects {_DEFAULT_CONFIG[algo].__name__}, got {type(config).__name__}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels, dtype=int)
    if len(X) == 0 or len(X) != len(labels):
        raise ValueError("training data is empty or mislabelled")
    if len(np.unique(labels)) < 2:
        raise ValueError("need at least two classes to train")
    if algo is Algorithm.KNN:
        model = KnnModel(X.copy(), labels.copy(), config.k)
    elif algo is Algorithm.SVM:
        model = SvmModel.fit(X, labels, config, backend)
    else:
        model = RandomForest.fit(X, labels, config, backend)
    echo = asdict(config)
    if algo is Algorithm.SVM:
        echo["sigma2"] = model.sigma2
    return TrainedClassifier(algo, model, X.shape[1], int(labels.max()) + 1, time.time(), echo)


def stack_fingerprints(fingerprints: Mapping[int, FingerprintMatrix]) -> tuple[np.ndarray, np.ndarray]:
    mats = [(cid, fm.rows) for cid, fm in sorted(fingerprints.items())]
    widths = {m.shape[1] for _, m in mats}
    if len(widths) != 1:
        raise ValueError(f"fingerprint matrices disagree on feature count: {sorted(widths)}")
    if any(len(m) == 0 for _, m in mats):
        raise ValueError("every class needs at least one fingerprint row")
    X = np.vstack([m for _, m in mats])
    y = np.concatenate([np.full(len(m), cid) for cid, m in mats])
    return X, y


def train(algorithm, config: Optional[Config], fingerprints: Mapping[int, FingerprintMatrix], backend=None) -> TrainedClassifier:
    if len(fingerprints) < 2:
        raise ValueError("need at least two classes to train")
    X, y = stack_fingerprints(fingerprints)
    return train_arrays(algorithm, config, X, y, backend)


def predict(model: TrainedClassifier, r) -> int:
    r = np.asarray(r, dtype=float)
    if r.ndim != 1 or len(r) != model.feature_count:
        raise ValueError(f"model expects {model.feature_count} RSSI values, got shape {r.shape}")
    return int(model.predict_many(r[None, :])[0])


class NoModelError(RuntimeError):
    pass


class OnlineTrainer:
    """Per-class ring buffers fed by GSN messages, with periodic model rebuilds."""

    def __init__(
        self,
        gsn_classes: Mapping[str, int],
        T: int,
        M: int,
        algorithm=Algorithm.RF,
        config: Optional[Config] = None,
        train_period: float = 3600.0,
        fill: float = DEFAULT_FILL,
    ):
        if not train_period > 0:
            raise ValueError("train_period must be positive")
        self.gsn_classes = dict(gsn_classes)
        self.matrices = {cid: FingerprintMatrix(cid, T, M, fill) for cid in sorted(set(self.gsn_classes.values()))}
        self.algorithm = Algorithm.parse(algorithm)
        self.config = config
        self.train_period = train_period
        self.current_model: Optional[TrainedClassifier] = None
        self.last_trained: Optional[float] = None

    def retrain(self, clock: float) -> bool:
        ready = {c: fm for c, fm in self.matrices.items() if len(fm) > 0}
        if len(ready) < 2:
            log.warning("retrain at t=%s skipped: only %d classes have data", clock, len(ready))
            return False
        model = train(self.algorithm, self.config, ready)
        self.current_model = model  # single reference swap
        self.last_trained = clock
        return True


def online_step(tr: OnlineTrainer, msg: MessageRecord, clock: float) -> Optional[int]:
    """Handle one message: GSN messages update their class buffer, SN messages get a class."""
    if math.fmod(clock, tr.train_period) == 0:
        tr.retrain(clock)
    cid = tr.gsn_classes.get(msg.node_id)
    if cid is not None:
        tr.matrices[cid].insert(msg.rssi)
        return None
    if tr.current_model is None:
        raise NoModelError("no model has been trained yet")
    fm = tr.matrices[next(iter(tr.matrices))]
    r = np.where(np.isnan(msg.rssi), fm.fill, msg.rssi)
    return predict(tr.current_model, r)


def class_error(estimated: int, truth: int, part: ClassPartition) -> float:
    """Distance in metres between the estimated and true class centres."""
    a, b = part.centers[estimated], part.centers[truth]
    return math.hypot(a.x - b.x, a.y - b.y)
