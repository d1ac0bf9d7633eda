"""Log-distance path loss with log-normal shadowing, and distance-estimation bounds."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import MISSING, MessageRecord, MessageSet
from .geo import ClassPartition, PlanarPoint, unproject

SPEED_OF_LIGHT = 299_792_458.0


class NodeKind(enum.Enum):
    GSN = "gsn"  # GPS-enabled: position travels with each message
    SN = "sn"


@dataclass(frozen=True)
class ChannelModel:
    pl0_db: float = 40.0
    d0: float = 1.0
    n_p: float = 3.0
    sigma_sh: float = 6.0
    rssi_floor: float = -140.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.n_p > 0:
            raise ValueError(f"path-loss exponent must be positive, got {self.n_p}")
        if self.sigma_sh < 0:
            raise ValueError(f"shadowing std-dev must be non-negative, got {self.sigma_sh}")
        if not self.d0 > 0:
            raise ValueError(f"reference distance must be positive, got {self.d0}")

    def mean_rssi(self, tx_dbm: float, d):
        """Noise-free received power at distance ``d`` (scalar or array)."""
        return tx_dbm - self.pl0_db - 10.0 * self.n_p * np.log10(np.asarray(d, dtype=float) / self.d0)

    def to_dict(self) -> dict:
        return {
            "pl0_db": self.pl0_db,
            "d0_m": self.d0,
            "n_p": self.n_p,
            "sigma_sh_db": self.sigma_sh,
            "rssi_floor_dbm": self.rssi_floor,
            "seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ChannelModel":
        defaults = cls()
        return cls(
            pl0_db=float(doc.get("pl0_db", defaults.pl0_db)),
            d0=float(doc.get("d0_m", defaults.d0)),
            n_p=float(doc.get("n_p", defaults.n_p)),
            sigma_sh=float(doc.get("sigma_sh_db", defaults.sigma_sh)),
            rssi_floor=float(doc.get("rssi_floor_dbm", defaults.rssi_floor)),
            rng_seed=int(doc.get("seed", defaults.rng_seed)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def rssi_sample(m: ChannelModel, tx_dbm: float, d: float, rng: np.random.Generator) -> Optional[float]:
    """One RSSI draw at distance ``d``; ``None`` when it falls below the receiver floor."""
    if d < m.d0:
        raise ValueError(f"distance {d} m is below the reference distance {m.d0} m")
    rssi = float(m.mean_rssi(tx_dbm, d))
    if m.sigma_sh > 0:
        rssi += m.sigma_sh * rng.standard_normal()
    return None if rssi < m.rssi_floor else rssi


@dataclass(frozen=True)
class CrlbInputs:
    snr: float
    beta_hz: float
    c: float = SPEED_OF_LIGHT


def crlb_toa(i: CrlbInputs) -> float:
    """Lower bound on the ranging std-dev of a time-of-arrival estimator."""
    if not (i.snr > 0 and i.beta_hz > 0):
        raise ValueError("SNR and effective bandwidth must be positive")
    return i.c / (2.0 * math.sqrt(2.0) * math.pi * math.sqrt(i.snr) * i.beta_hz)


def crlb_rssi(sigma_sh: float, n_p: float, d: float) -> float:
    """Lower bound on the ranging std-dev of an RSSI estimator at distance ``d``."""
    if not n_p > 0:
        raise ValueError(f"path-loss exponent must be positive, got {n_p}")
    if d < 0:
        raise ValueError(f"distance must be non-negative, got {d}")
    return (math.log(10.0) / 10.0) * (sigma_sh / n_p) * d


def simulate_campaign(
    part: ClassPartition,
    m: ChannelModel,
    bs: Sequence[PlanarPoint],
    nodes: Sequence[tuple[PlanarPoint, NodeKind]],
    T: int,
    tx_dbm: float = 14.0,
    node_ids: Optional[Sequence[str]] = None,
) -> MessageSet:
    """Generate ``T`` messages per node, each heard independently by every base station.

    Shadowing is drawn per (message, base station) from a generator seeded with
    ``m.rng_seed``; node ``i`` uses its own child stream so results do not depend
    on how nodes are batched.
    """
    if len(bs) < 1:
        raise ValueError("need at least one base station")
    if T < 1:
        raise ValueError(f"messages per node must be >= 1, got {T}")
    if node_ids is None:
        node_ids = [f"n{i}" for i in range(len(nodes))]
    bs_xy = np.array([[b.x, b.y] for b in bs], dtype=float)
    records = []
    for idx, ((pos, kind), nid) in enumerate(zip(nodes, node_ids)):
        rng = np.random.default_rng(np.random.SeedSequence(m.rng_seed, spawn_key=(idx,)))
        d = np.maximum(np.hypot(*(bs_xy - pos.as_array()).T), m.d0)
        mean = m.mean_rssi(tx_dbm, d)
        geo = unproject(part.origin, pos) if kind is NodeKind.GSN else None
        for t in range(T):
            rssi = mean + m.sigma_sh * rng.standard_normal(len(bs)) if m.sigma_sh > 0 else mean.copy()
            rssi = np.where(rssi < m.rssi_floor, MISSING, rssi)
            records.append(MessageRecord(time_index=t, node_id=nid, position=geo, rssi=rssi))
    return MessageSet(bs_ids=tuple(f"bs{j}" for j in range(len(bs))), records=tuple(records))
