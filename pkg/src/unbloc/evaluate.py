"""Accuracy metrics, error CDFs, and seeded parameter sweeps over synthetic campaigns.

A synthetic campaign stands in for a drive-test dataset: each class gets a
moving GSN that reports from inside the anchor disk, and stationary test
nodes scattered over the rest of the class disk send several messages each.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelModel, rssi_sample, NodeKind, simulate_campaign
from .classify import Algorithm, KnnConfig, TrainedClassifier, train
from .dataset import (
    DEFAULT_FILL,
    AnchorSplit,
    FingerprintMatrix,
    MessageSet,
    anchor_split,
    average_k,
    build_fingerprints,
    select_features,
)
from .forest import ForestConfig
from .geo import SQRT3, ClassPartition, GeoPoint, PlanarPoint, make_partition, project
from .locate import DEFAULT_THRESHOLD_DBM, Anchor, Mode, localize
from .ranging import DEFAULT_DOMAIN, RangingSample, fit_polynomial, fit_power
from .svm import SvmConfig

# origin of the synthetic campaigns: a mid-latitude city centre
CITY_ORIGIN = GeoPoint(51.2194, 4.4025)
# class count -> centre spacing used for the city partitions
CITY_SPACING = {3: 1830.0, 7: 1600.0, 18: 1300.0}


class SweepError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: truth, columns: prediction

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        L = len(self.counts)
        w.writerow(["truth"] + [f"pred_{j}" for j in range(L)])
        for i, row in enumerate(self.counts):
            w.writerow([i] + row.tolist())
        return buf.getvalue()


def confusion_from_predictions(pred: Sequence[int], truth: Sequence[int], n_classes: int) -> ConfusionMatrix:
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if len(truth) == 0:
        raise ValueError("empty test set")
    if pred.shape != truth.shape:
        raise ValueError("predictions and labels differ in length")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return ConfusionMatrix(counts)


def confusion(model: TrainedClassifier, test: MessageSet, labels: Sequence[int], fill: float = DEFAULT_FILL) -> ConfusionMatrix:
    if len(test) == 0:
        raise ValueError("empty test set")
    pred = model.predict_many(test.rssi_matrix(fill))
    n = max(model.class_count, int(max(labels)) + 1)
    return confusion_from_predictions(pred, labels, n)


@dataclass(frozen=True)
class EmpiricalCdf:
    """Right-continuous step function: ``F(x)`` is the fraction of errors ``<= x``."""

    values: np.ndarray
    fractions: np.ndarray

    def __call__(self, x) -> np.ndarray | float:
        out = np.searchsorted(self.values, x, side="right") / len(self.values)
        return float(out) if np.ndim(out) == 0 else out

    def to_csv(self) -> str:
        lines = ["error_m,cdf"] + [f"{v!r},{f!r}" for v, f in zip(self.values.tolist(), self.fractions.tolist())]
        return "\n".join(lines) + "\n"


def error_cdf(errors: Sequence[float]) -> EmpiricalCdf:
    v = np.sort(np.asarray(errors, dtype=float))
    if v.size == 0:
        raise ValueError("error_cdf needs at least one value")
    uniq, counts = np.unique(v, return_counts=True)
    return EmpiricalCdf(uniq, np.cumsum(counts) / v.size)


@dataclass(frozen=True)
class CampaignConfig:
    n_classes: int = 7
    spacing_D: float = 1600.0
    radius_r: Optional[float] = None  # None -> D / sqrt(3), connected classes
    n_bs: int = 10
    bs_ring: tuple[float, float] = (1500.0, 6000.0)
    channel: ChannelModel = field(default_factory=ChannelModel)
    tx_dbm: float = 14.0
    train_msgs: int = 40
    test_nodes_per_class: int = 12
    msgs_per_test_node: int = 10
    anchor_radius: float = 100.0
    origin: GeoPoint = CITY_ORIGIN

    @property
    def r(self) -> float:
        return self.radius_r if self.radius_r is not None else self.spacing_D / SQRT3

    def with_gap_ratio(self, x_over_D: float) -> "CampaignConfig":
        if not 0 <= x_over_D < 1:
            raise SweepError(f"x/D must be in [0, 1), got {x_over_D}")
        return replace(self, radius_r=self.spacing_D * (1.0 - x_over_D) / SQRT3)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["channel"] = self.channel.to_dict()
        doc["origin"] = {"lat": self.origin.lat, "lon": self.origin.lon}
        doc["bs_ring"] = list(self.bs_ring)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "CampaignConfig":
        doc = dict(doc)
        if "channel" in doc:
            doc["channel"] = ChannelModel.from_dict(doc["channel"])
        if "origin" in doc:
            doc["origin"] = GeoPoint(float(doc["origin"]["lat"]), float(doc["origin"]["lon"]))
        if "bs_ring" in doc:
            doc["bs_ring"] = tuple(float(v) for v in doc["bs_ring"])
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown campaign settings: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True, eq=False)
class Campaign:
    partition: ClassPartition
    base_stations: tuple[PlanarPoint, ...]
    messages: MessageSet


def _disk_points(rng: np.random.Generator, center: PlanarPoint, r_in: float, r_out: float, n: int) -> list[PlanarPoint]:
    rad = np.sqrt(rng.uniform(r_in**2, r_out**2, n))
    ang = rng.uniform(0.0, 2.0 * math.pi, n)
    return [PlanarPoint(center.x + a * math.cos(t), center.y + a * math.sin(t)) for a, t in zip(rad, ang)]


def build_campaign(cfg: CampaignConfig, seed: int) -> Campaign:
    """Synthesise one drive-test campaign; all positions and shadowing follow from ``seed``."""
    if cfg.n_classes < 1:
        raise SweepError(f"need at least one class, got {cfg.n_classes}")
    part = make_partition(cfg.origin, cfg.n_classes, cfg.spacing_D, cfg.r)
    geo_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    ang = geo_rng.uniform(0.0, 2.0 * math.pi, cfg.n_bs)
    rad = geo_rng.uniform(cfg.bs_ring[0], cfg.bs_ring[1], cfg.n_bs)
    bs = tuple(PlanarPoint(a * math.cos(t), a * math.sin(t)) for a, t in zip(rad, ang))

    # geometry draws use their own stream so the BS layout is shared across geometries
    pos_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    gsn_nodes, gsn_ids, sn_nodes, sn_ids = [], [], [], []
    anchor_r = min(cfg.anchor_radius, cfg.r) * 0.999
    for c, center in enumerate(part.centers):
        for i, p in enumerate(_disk_points(pos_rng, center, 0.0, anchor_r, cfg.train_msgs)):
            gsn_nodes.append((p, NodeKind.GSN))
            gsn_ids.append(f"c{c}-fix{i}")
        r_in = min(cfg.anchor_radius, cfg.r)
        for i, p in enumerate(_disk_points(pos_rng, center, r_in, cfg.r, cfg.test_nodes_per_class)):
            sn_nodes.append((p, NodeKind.GSN))  # position kept as ground truth
            sn_ids.append(f"c{c}-node{i}")
    ch = cfg.channel
    ch_seed = int(np.random.SeedSequence(seed, spawn_key=(2,)).generate_state(1)[0])
    anchors = simulate_campaign(part, replace(ch, rng_seed=ch_seed), bs, gsn_nodes, 1, cfg.tx_dbm, gsn_ids)
    tests = simulate_campaign(
        part, replace(ch, rng_seed=ch_seed + 1), bs, sn_nodes, cfg.msgs_per_test_node, cfg.tx_dbm, sn_ids
    )
    return Campaign(part, bs, MessageSet(anchors.bs_ids, anchors.records + tests.records))


def _group_test(split: AnchorSplit, k: int, fill: float) -> tuple[np.ndarray, np.ndarray]:
    """Test vectors, optionally averaged ``k`` at a time per node (messages in time order)."""
    X = split.test.rssi_matrix(fill)
    y = np.asarray(split.test_truth, dtype=int)
    if k <= 1:
        return X, y
    groups: dict[str, list[int]] = defaultdict(list)
    for i, rec in enumerate(split.test.records):
        groups[rec.node_id].append(i)
    rows, labels = [], []
    for nid in sorted(groups):
        idx = sorted(groups[nid], key=lambda i: split.test.records[i].time_index)
        if len(idx) < k:
            continue
        fm = average_k(FingerprintMatrix.from_rows(int(y[idx[0]]), X[idx], fill), k)
        rows.append(fm.rows)
        labels.extend([int(y[idx[0]])] * len(fm))
    if not rows:
        raise SweepError(f"no test node has {k} messages to average")
    return np.vstack(rows), np.asarray(labels)


@dataclass(frozen=True)
class EvalSettings:
    train_msgs: Optional[int] = None  # None -> use every anchor message
    n_features: Optional[int] = None
    avg_k: int = 1
    sigma2: Optional[float] = None
    c_penalty: float = 1.0
    n_trees: int = 100
    knn_k: int = 11


def algorithm_config(algo: Algorithm, s: EvalSettings, seed: int):
    if algo is Algorithm.SVM:
        return SvmConfig(sigma2=s.sigma2, c_penalty=s.c_penalty)
    if algo is Algorithm.RF:
        return ForestConfig(n_trees=s.n_trees, rng_seed=seed)
    return KnnConfig(k=s.knn_k)


@dataclass
class EvalOutcome:
    accuracy: float
    train_time_ms: float
    confusion: ConfusionMatrix
    model: TrainedClassifier


def evaluate_split(split: AnchorSplit, algorithm, s: EvalSettings, seed: int, fill: float = DEFAULT_FILL) -> EvalOutcome:
    """Train on the split's anchor messages and score its test messages."""
    algo = Algorithm.parse(algorithm)
    if s.n_features is not None:
        tr, te = select_features(split.train, split.test, s.n_features)
        split = AnchorSplit(tr, te, split.labels, split.test_truth)
    counts = defaultdict(int)
    for r in split.train.records:
        counts[r.node_id] += 1
    T = s.train_msgs if s.train_msgs is not None else max(counts.values())
    fps = build_fingerprints(split.train, split.labels, T, fill)
    if s.avg_k > 1:
        fps = {c: average_k(fm, s.avg_k) for c, fm in fps.items()}
    X, y = _group_test(split, s.avg_k, fill)
    cfg = algorithm_config(algo, s, seed)
    t0 = time.perf_counter()
    model = train(algo, cfg, fps)
    dt = (time.perf_counter() - t0) * 1e3
    cm = confusion_from_predictions(model.predict_many(X), y, max(model.class_count, int(y.max()) + 1))
    return EvalOutcome(cm.accuracy, dt, cm, model)


class SweepKind(str, enum.Enum):
    FEATURES = "features"
    TRAIN_SIZE = "train_size"
    SPACING = "spacing"
    SIGMA2 = "sigma2"
    AVERAGING = "averaging"
    CLASS_COUNT = "class_count"

    @classmethod
    def parse(cls, name) -> "SweepKind":
        if isinstance(name, SweepKind):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"trainsize": "train_size", "classcount": "class_count", "sigma": "sigma2", "avg": "averaging"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise SweepError(f"unknown sweep kind {name!r}") from None


@dataclass
class SweepResult:
    kind: SweepKind
    x_values: list[float]
    accuracy: dict[str, list[float]]  # algorithm -> mean accuracy per x
    per_seed: dict[str, list[list[float]]]  # algorithm -> [x][seed]
    train_time_ms: dict[str, list[float]]
    seeds: list[int]
    config: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "x", "algorithm", "mean_accuracy", "std_accuracy", "mean_train_time_ms", "n_seeds"])
        for algo in self.accuracy:
            for i, x in enumerate(self.x_values):
                accs = self.per_seed[algo][i]
                w.writerow(
                    [self.kind.value, repr(x), algo, repr(self.accuracy[algo][i]), repr(float(np.std(accs))),
                     repr(self.train_time_ms[algo][i]), len(accs)]
                )
        return buf.getvalue()

    def to_dict(self, with_times: bool = True) -> dict:
        doc = {
            "kind": self.kind.value,
            "x_values": self.x_values,
            "accuracy": self.accuracy,
            "per_seed": self.per_seed,
            "seeds": self.seeds,
            "config": self.config,
        }
        if with_times:
            doc["train_time_ms"] = self.train_time_ms
        return doc


def _check_values(kind: SweepKind, xs: Sequence[float], cfg: CampaignConfig) -> None:
    if not xs:
        raise SweepError("sweep needs at least one x value")
    if kind is SweepKind.SPACING and any(not 0 <= x < 1 for x in xs):
        raise SweepError("spacing sweep needs 0 <= x/D < 1 (x must stay below D)")
    if kind is SweepKind.FEATURES and any(not 1 <= x <= cfg.n_bs for x in xs):
        raise SweepError(f"feature counts must lie in [1, {cfg.n_bs}]")
    if kind is SweepKind.TRAIN_SIZE and any(not 1 <= x <= cfg.train_msgs for x in xs):
        raise SweepError(f"training sizes must lie in [1, {cfg.train_msgs}]")
    if kind is SweepKind.SIGMA2 and any(x <= 0 for x in xs):
        raise SweepError("sigma2 values must be positive")
    if kind is SweepKind.AVERAGING and any(x < 1 or x > cfg.msgs_per_test_node for x in xs):
        raise SweepError(f"averaging windows must lie in [1, {cfg.msgs_per_test_node}]")
    if kind is SweepKind.CLASS_COUNT and any(x < 2 for x in xs):
        raise SweepError("class-count sweep needs at least two classes")


def run_sweep(
    kind,
    cfg: CampaignConfig,
    algorithms: Sequence,
    seeds: Sequence[int],
    x_values: Sequence[float],
    base: EvalSettings = EvalSettings(),
) -> SweepResult:
    """Evaluate each algorithm at every x value for every seed and average over seeds."""
    kind = SweepKind.parse(kind)
    algos = [Algorithm.parse(a) for a in algorithms]
    if kind is SweepKind.SIGMA2 and any(a is not Algorithm.SVM for a in algos):
        raise SweepError("the sigma2 sweep only applies to SVM")
    xs = list(x_values)
    _check_values(kind, xs, cfg)
    if kind is SweepKind.AVERAGING and cfg.train_msgs < max(xs):
        raise SweepError("averaging window exceeds the training messages per class")
    acc = {a.value: [[0.0] * len(seeds) for _ in xs] for a in algos}
    tms = {a.value: [[0.0] * len(seeds) for _ in xs] for a in algos}

    for si, seed in enumerate(seeds):
        shared = None
        if kind in (SweepKind.FEATURES, SweepKind.TRAIN_SIZE, SweepKind.SIGMA2, SweepKind.AVERAGING):
            camp = build_campaign(cfg, seed)
            shared = anchor_split(camp.messages, camp.partition, cfg.anchor_radius, seed)
        for xi, x in enumerate(xs):
            s = base
            split = shared
            if kind is SweepKind.FEATURES:
                s = replace(base, n_features=int(x))
            elif kind is SweepKind.TRAIN_SIZE:
                s = replace(base, train_msgs=int(x))
            elif kind is SweepKind.SIGMA2:
                s = replace(base, sigma2=float(x))
            elif kind is SweepKind.AVERAGING:
                s = replace(base, avg_k=int(x))
            elif kind is SweepKind.SPACING:
                camp = build_campaign(cfg.with_gap_ratio(float(x)), seed)
                split = anchor_split(camp.messages, camp.partition, cfg.anchor_radius, seed)
            elif kind is SweepKind.CLASS_COUNT:
                L = int(x)
                D = CITY_SPACING.get(L, cfg.spacing_D)
                camp = build_campaign(replace(cfg, n_classes=L, spacing_D=D, radius_r=None), seed)
                split = anchor_split(camp.messages, camp.partition, cfg.anchor_radius, seed)
            for a in algos:
                out = evaluate_split(split, a, s, seed)
                acc[a.value][xi][si] = out.accuracy
                tms[a.value][xi][si] = out.train_time_ms
    return SweepResult(
        kind=kind,
        x_values=[float(x) for x in xs],
        accuracy={a: [float(np.mean(v)) for v in rows] for a, rows in acc.items()},
        per_seed=acc,
        train_time_ms={a: [float(np.mean(v)) for v in rows] for a, rows in tms.items()},
        seeds=list(seeds),
        config={"campaign": cfg.to_dict(), "settings": asdict(base)},
    )


def is_nondecreasing(series: Sequence[float], band: float = 0.0) -> bool:
    """Every later point stays within ``band`` below every earlier one."""
    return all(series[j] >= series[i] - band for i in range(len(series)) for j in range(i + 1, len(series)))


def is_unimodal(series: Sequence[float], band: float = 0.0) -> bool:
    """Rises to a single interior peak and falls after it, within ``band``."""
    p = int(np.argmax(series))
    if p in (0, len(series) - 1):
        return False
    return is_nondecreasing(series[: p + 1], band) and is_nondecreasing(series[p:][::-1], band)


# short-range link: -110 dBm at ~200 m from a 14 dBm transmitter, no shadowing
D2D_CHANNEL = ChannelModel(pl0_db=55.0, d0=1.0, n_p=3.0, sigma_sh=0.0)


@dataclass(frozen=True)
class TwoStepConfig:
    campaign: CampaignConfig = field(
        default_factory=lambda: CampaignConfig(
            n_classes=7, spacing_D=150.0, anchor_radius=30.0, train_msgs=40, test_nodes_per_class=20, msgs_per_test_node=1
        )
    )
    d2d: ChannelModel = D2D_CHANNEL
    d2d_tx_dbm: float = 14.0
    threshold: float = DEFAULT_THRESHOLD_DBM
    curve: str = "polynomial"  # or "power"
    degree: int = 3
    algorithm: str = "kNN"


@dataclass
class TwoStepResult:
    node_ids: list[str]
    class_only_errors: np.ndarray
    pipeline_errors: np.ndarray
    modes: list[Mode]

    def fraction_below(self, limit: float) -> tuple[float, float]:
        """Share of nodes under ``limit`` metres for (class only, pipeline)."""
        return float(np.mean(self.class_only_errors < limit)), float(np.mean(self.pipeline_errors < limit))


def _anchor_curve(cfg: TwoStepConfig, seed: int):
    lo, hi = DEFAULT_DOMAIN
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    samples = []
    for d in np.arange(lo, hi + 1e-9, 10.0):
        v = rssi_sample(cfg.d2d, cfg.d2d_tx_dbm, float(d), rng)
        if v is not None:
            samples.append(RangingSample(float(d), v))
    if cfg.curve == "power":
        return fit_power(samples)
    return fit_polynomial(samples, cfg.degree)


def run_two_step(cfg: TwoStepConfig, seed: int) -> TwoStepResult:
    """Fingerprint-only versus fingerprint plus D2D refinement, node by node.

    One GSN anchor sits at every class centre and ranges each SN over the
    short-range link; the SN's first test message is classified by a model
    trained on the anchor-disk messages.
    """
    camp = build_campaign(cfg.campaign, seed)
    part = camp.partition
    split = anchor_split(camp.messages, part, cfg.campaign.anchor_radius, seed, balance=False)
    fps = build_fingerprints(split.train, split.labels, cfg.campaign.train_msgs)
    algo = Algorithm.parse(cfg.algorithm)
    model = train(algo, algorithm_config(algo, EvalSettings(), seed), fps)
    curve = _anchor_curve(cfg, seed)
    anchors = [Anchor(c, p, curve) for c, p in enumerate(part.centers)]
    d2d_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(4,)))

    X = split.test.rssi_matrix(DEFAULT_FILL)
    seen, ids, e_cls, e_pipe, modes = set(), [], [], [], []
    for i, rec in enumerate(split.test.records):
        if rec.node_id in seen:
            continue
        seen.add(rec.node_id)
        truth = project(part.origin, rec.position)
        readings = {}
        for j, a in enumerate(anchors):
            v = rssi_sample(cfg.d2d, cfg.d2d_tx_dbm, max(truth.dist(a.position), cfg.d2d.d0), d2d_rng)
            if v is not None:
                readings[j] = v
        bare = localize(X[i], model, anchors, part.centers, None, cfg.threshold, rec.node_id)
        full = localize(X[i], model, anchors, part.centers, readings, cfg.threshold, rec.node_id)
        ids.append(rec.node_id)
        e_cls.append(truth.dist(bare.position))
        e_pipe.append(truth.dist(full.position))
        modes.append(full.mode)
    return TwoStepResult(ids, np.asarray(e_cls), np.asarray(e_pipe), modes)
