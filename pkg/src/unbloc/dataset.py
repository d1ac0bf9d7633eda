"""Message records, per-class fingerprint matrices, and train/test preparation.

On-disk format is a wide CSV, one row per message::

    node_id,t,lat,lon,rssi_<bs0>,rssi_<bs1>,...

``lat``/``lon`` are empty for messages without a GPS fix. An empty RSSI cell or
the sentinel ``-200`` means the base station did not hear the message; in
memory that is ``MISSING`` (NaN).
"""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, TextIO

import numpy as np

from .geo import ClassPartition, GeoPoint, assign_class, project

MISSING = float("nan")
MISSING_SENTINEL = -200.0
DEFAULT_FILL = -200.0


class ParseError(ValueError):
    def __init__(self, row: int, msg: str):
        super().__init__(f"row {row}: {msg}")
        self.row = row


class SplitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MessageRecord:
    time_index: int
    node_id: str
    position: Optional[GeoPoint]
    rssi: np.ndarray

    def same_as(self, other: "MessageRecord") -> bool:
        return (
            self.time_index == other.time_index
            and self.node_id == other.node_id
            and self.position == other.position
            and np.array_equal(self.rssi, other.rssi, equal_nan=True)
        )


@dataclass(frozen=True, eq=False)
class MessageSet:
    bs_ids: tuple[str, ...]
    records: tuple[MessageRecord, ...] = ()

    def __post_init__(self):
        m = len(self.bs_ids)
        for rec in self.records:
            if len(rec.rssi) != m:
                raise ValueError(f"record for {rec.node_id} has {len(rec.rssi)} RSSI values, expected {m}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_bs(self) -> int:
        return len(self.bs_ids)

    def rssi_matrix(self, fill: Optional[float] = DEFAULT_FILL) -> np.ndarray:
        """Stack the RSSI vectors; ``fill=None`` keeps MISSING as NaN."""
        if not self.records:
            return np.empty((0, self.n_bs))
        X = np.vstack([r.rssi for r in self.records]).astype(float)
        if fill is not None:
            X[np.isnan(X)] = fill
        return X

    def same_as(self, other: "MessageSet") -> bool:
        return (
            self.bs_ids == other.bs_ids
            and len(self) == len(other)
            and all(a.same_as(b) for a, b in zip(self.records, other.records))
        )

    def select(self, idx: Iterable[int]) -> "MessageSet":
        return MessageSet(self.bs_ids, tuple(self.records[i] for i in idx))

    def with_columns(self, cols: Sequence[int]) -> "MessageSet":
        cols = list(cols)
        recs = tuple(
            MessageRecord(r.time_index, r.node_id, r.position, r.rssi[cols].copy()) for r in self.records
        )
        return MessageSet(tuple(self.bs_ids[c] for c in cols), recs)


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(row, f"non-numeric value {cell!r} in column {col}") from None
    if not math.isfinite(v):
        raise ParseError(row, f"non-finite value {cell!r} in column {col}")
    return v


def load_messages(source: TextIO | str | bytes, sentinel: float = MISSING_SENTINEL) -> MessageSet:
    """Parse the wide CSV format into a :class:`MessageSet`."""
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError(1, "missing header row") from None
    if header[:4] != ["node_id", "t", "lat", "lon"]:
        raise ParseError(1, f"header must start with node_id,t,lat,lon; got {header[:4]}")
    rssi_cols = header[4:]
    if not rssi_cols or not all(c.startswith("rssi_") for c in rssi_cols):
        raise ParseError(1, "expected one or more rssi_<bs_id> columns after lat,lon")
    bs_ids = tuple(c[len("rssi_"):] for c in rssi_cols)
    seen = set()
    records = []
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(rowno, f"expected {len(header)} columns, got {len(row)}")
        node_id = row[0].strip()
        try:
            t = int(row[1])
        except ValueError:
            raise ParseError(rowno, f"non-integer time index {row[1]!r}") from None
        if (node_id, t) in seen:
            raise ParseError(rowno, f"duplicate message ({node_id}, {t})")
        seen.add((node_id, t))
        lat, lon = row[2].strip(), row[3].strip()
        if bool(lat) != bool(lon):
            raise ParseError(rowno, "lat and lon must both be present or both empty")
        pos = None
        if lat:
            try:
                pos = GeoPoint(_parse_float(lat, rowno, "lat"), _parse_float(lon, rowno, "lon"))
            except ValueError as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(rowno, str(exc)) from None
        rssi = np.empty(len(bs_ids))
        for j, (cell, col) in enumerate(zip(row[4:], rssi_cols)):
            cell = cell.strip()
            v = MISSING if not cell else _parse_float(cell, rowno, col)
            rssi[j] = MISSING if v == sentinel else v
        records.append(MessageRecord(t, node_id, pos, rssi))
    return MessageSet(bs_ids, tuple(records))


def dump_messages(ms: MessageSet, out: Optional[TextIO] = None) -> str:
    buf = out if out is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node_id", "t", "lat", "lon"] + [f"rssi_{b}" for b in ms.bs_ids])
    for r in ms.records:
        pos = ["", ""] if r.position is None else [repr(r.position.lat), repr(r.position.lon)]
        cells = ["" if math.isnan(v) else repr(float(v)) for v in r.rssi]
        w.writerow([r.node_id, r.time_index] + pos + cells)
    return buf.getvalue() if out is None else ""


class FingerprintMatrix:
    """Fixed-capacity ring buffer of the ``T`` most recent RSSI vectors of one class.

    Row ``write_cursor`` is overwritten next; ``rows`` returns a copy in arrival
    order with MISSING replaced by ``fill``.
    """

    def __init__(self, class_id: int, T: int, M: int, fill: float = DEFAULT_FILL):
        if T < 1 or M < 1:
            raise ValueError(f"fingerprint matrix needs T >= 1 and M >= 1, got T={T}, M={M}")
        self.class_id = class_id
        self.T = T
        self.M = M
        self.fill = fill
        self._buf = np.full((T, M), MISSING)
        self.write_cursor = 0
        self.n_written = 0

    def insert(self, rssi: np.ndarray) -> None:
        rssi = np.asarray(rssi, dtype=float)
        if rssi.shape != (self.M,):
            raise ValueError(f"expected {self.M} RSSI values, got shape {rssi.shape}")
        self._buf[self.write_cursor] = rssi
        self.write_cursor = (self.write_cursor + 1) % self.T
        self.n_written += 1

    def __len__(self) -> int:
        return min(self.n_written, self.T)

    @property
    def buffer(self) -> np.ndarray:
        """Physical storage, row ``i`` being slot ``i`` of the ring (read-only view)."""
        v = self._buf.view()
        v.flags.writeable = False
        return v

    @property
    def raw_rows(self) -> np.ndarray:
        if self.n_written < self.T:
            return self._buf[: self.n_written].copy()
        return np.roll(self._buf, -self.write_cursor, axis=0)

    @property
    def rows(self) -> np.ndarray:
        X = self.raw_rows
        X[np.isnan(X)] = self.fill
        return X

    @classmethod
    def from_rows(cls, class_id: int, rows: np.ndarray, fill: float = DEFAULT_FILL) -> "FingerprintMatrix":
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        fm = cls(class_id, rows.shape[0], rows.shape[1], fill)
        for r in rows:
            fm.insert(r)
        return fm


def build_fingerprints(
    ms: MessageSet, labels: Mapping[str, int], T: int, fill: float = DEFAULT_FILL
) -> dict[int, FingerprintMatrix]:
    """Fill one ring buffer per class with the latest ``T`` messages of its labelled nodes."""
    by_class: dict[int, list[tuple[int, int, MessageRecord]]] = defaultdict(list)
    for order, rec in enumerate(ms.records):
        if rec.node_id in labels:
            by_class[labels[rec.node_id]].append((rec.time_index, order, rec))
    out = {}
    for cid in sorted(set(labels.values())):
        msgs = sorted(by_class.get(cid, []), key=lambda e: (e[0], e[1]))
        if not msgs:
            raise SplitError(f"class {cid} has no messages")
        fm = FingerprintMatrix(cid, T, ms.n_bs, fill)
        for _, _, rec in msgs:
            fm.insert(rec.rssi)
        out[cid] = fm
    return out


@dataclass(frozen=True, eq=False)
class AnchorSplit:
    """Training messages relabelled to one virtual GSN per class, plus labelled test messages."""

    train: MessageSet
    test: MessageSet
    labels: dict[str, int] = field(default_factory=dict)
    test_truth: tuple[int, ...] = ()

    @property
    def train_truth(self) -> tuple[int, ...]:
        return tuple(self.labels[r.node_id] for r in self.train.records)


def gsn_id(class_id: int) -> str:
    return f"gsn{class_id}"


def _balance(groups: dict[int, list[int]], rng: np.random.Generator) -> dict[int, list[int]]:
    n = min(len(v) for v in groups.values())
    return {c: sorted(rng.choice(v, size=n, replace=False).tolist()) if len(v) > n else list(v) for c, v in groups.items()}


def anchor_split(
    ms: MessageSet, part: ClassPartition, anchor_radius: float, seed: int = 0, balance: bool = True
) -> AnchorSplit:
    """Messages within ``anchor_radius`` of a centre train that class; other in-class ones test.

    Messages in the gaps between classes are dropped. With ``balance`` each
    side is down-sampled to its smallest class count.
    """
    centers = part.center_array()
    train_g: dict[int, list[int]] = {c: [] for c in range(part.n_classes)}
    test_g: dict[int, list[int]] = {c: [] for c in range(part.n_classes)}
    for i, rec in enumerate(ms.records):
        if rec.position is None:
            raise SplitError(f"message ({rec.node_id}, {rec.time_index}) has no position")
        p = project(part.origin, rec.position)
        cid = assign_class(part, p)
        if cid is None:
            continue
        d = math.hypot(p.x - centers[cid, 0], p.y - centers[cid, 1])
        (train_g if d <= anchor_radius else test_g)[cid].append(i)
    empty = [c for c, v in train_g.items() if not v]
    if empty:
        raise SplitError(f"classes {empty} have no messages within {anchor_radius} m of their centre")
    if balance:
        rng = np.random.default_rng(seed)
        train_g = _balance(train_g, rng)
        test_g = _balance(test_g, rng)
    train_recs = []
    for c in sorted(train_g):
        for i in train_g[c]:
            r = ms.records[i]
            train_recs.append(MessageRecord(r.time_index, gsn_id(c), r.position, r.rssi))
    test_idx = sorted((i, c) for c, v in test_g.items() for i in v)
    return AnchorSplit(
        train=MessageSet(ms.bs_ids, tuple(train_recs)),
        test=ms.select(i for i, _ in test_idx),
        labels={gsn_id(c): c for c in sorted(train_g)},
        test_truth=tuple(c for _, c in test_idx),
    )


def average_k(fm: FingerprintMatrix, k: int) -> FingerprintMatrix:
    """Replace each run of ``k`` consecutive rows by its column mean; a trailing partial run is dropped."""
    rows = fm.rows
    if k < 1 or k > len(rows):
        raise ValueError(f"averaging window {k} must be in [1, {len(rows)}]")
    n = len(rows) // k
    avg = rows[: n * k].reshape(n, k, fm.M).mean(axis=1)
    return FingerprintMatrix.from_rows(fm.class_id, avg, fm.fill)


def rank_features(train: MessageSet) -> np.ndarray:
    """Column indices ordered by how many training messages each base station heard."""
    heard = (~np.isnan(train.rssi_matrix(fill=None))).sum(axis=0)
    return np.lexsort((np.arange(train.n_bs), -heard))


def select_features(train: MessageSet, test: MessageSet, n_keep: int) -> tuple[MessageSet, MessageSet]:
    """Keep the ``n_keep`` most frequently heard base stations (original column order)."""
    if not 1 <= n_keep <= train.n_bs:
        raise ValueError(f"feature count {n_keep} must be in [1, {train.n_bs}]")
    if test.bs_ids != train.bs_ids:
        raise ValueError("train and test sets use different base stations")
    cols = sorted(rank_features(train)[:n_keep].tolist())
    return train.with_columns(cols), test.with_columns(cols)
