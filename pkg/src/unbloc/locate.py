"""Two-step localisation: fingerprint class first, then D2D ranging and multilateration."""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .classify import TrainedClassifier, predict
from .geo import PlanarPoint
from .ranging import RangingCurve, invert_distance

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD_DBM = -110.0
PLANNING_RADIUS_M = 200.0
_COND_LIMIT = 1e10


class InsufficientAnchorsError(ValueError):
    pass


class IllConditionedError(ValueError):
    pass


class Mode(str, enum.Enum):
    CLASS_ONLY = "ClassOnly"
    REFINED = "Refined"


@dataclass(frozen=True)
class Anchor:
    class_id: int
    position: PlanarPoint
    curve: Optional[RangingCurve] = None

    def to_dict(self) -> dict:
        doc = {"class_id": self.class_id, "x": self.position.x, "y": self.position.y}
        if self.curve is not None:
            doc["curve"] = self.curve.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Anchor":
        curve = doc.get("curve")
        return cls(
            int(doc["class_id"]),
            PlanarPoint(float(doc["x"]), float(doc["y"])),
            None if curve is None else RangingCurve.from_dict(curve),
        )


@dataclass(frozen=True)
class LocalizationResult:
    mode: Mode
    class_id: int
    position: PlanarPoint
    anchors_used: int
    per_anchor_distances: tuple[float, ...] = field(default_factory=tuple)
    node_id: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "node_id": self.node_id,
                "mode": self.mode.value,
                "class_id": self.class_id,
                "x_m": self.position.x,
                "y_m": self.position.y,
                "k_anchors": self.anchors_used,
            }
        )


def in_range(sn_rssi_at_anchor: Optional[float], threshold: float = DEFAULT_THRESHOLD_DBM) -> bool:
    """True when the anchor heard the SN at or above ``threshold``."""
    return sn_rssi_at_anchor is not None and not np.isnan(sn_rssi_at_anchor) and sn_rssi_at_anchor >= threshold


def multilaterate(anchors: Sequence[PlanarPoint], distances: Sequence[float]) -> PlanarPoint:
    """Least-squares position from three or more anchor distances.

    The first circle equation is subtracted from the others to get a linear
    system, solved through its normal equations; one Gauss-Newton pass on the
    range residuals then removes the linearisation bias.
    """
    if len(anchors) != len(distances):
        raise ValueError("anchors and distances differ in length")
    if len(anchors) < 3:
        raise InsufficientAnchorsError(f"multilateration needs >= 3 anchors, got {len(anchors)}")
    C = np.array([[a.x, a.y] for a in anchors], dtype=float)
    d = np.asarray(distances, dtype=float)
    ref = C[0]
    R = C - ref  # work relative to the first anchor
    A = 2.0 * R[1:]
    b = d[0] ** 2 - d[1:] ** 2 + (R[1:] ** 2).sum(axis=1)
    N = A.T @ A
    scale = np.trace(N)
    if scale == 0 or np.linalg.cond(N) > _COND_LIMIT:
        raise IllConditionedError("anchors are (nearly) collinear")
    p = np.linalg.solve(N, A.T @ b)

    diff = p - R
    rng = np.hypot(diff[:, 0], diff[:, 1])
    ok = rng > 1e-9 * (1.0 + np.sqrt(scale))
    if ok.sum() >= 2:
        J = diff[ok] / rng[ok, None]
        res = rng[ok] - d[ok]
        JtJ = J.T @ J
        if np.linalg.cond(JtJ) < _COND_LIMIT:
            p = p - np.linalg.solve(JtJ, J.T @ res)
    return PlanarPoint(float(p[0] + ref[0]), float(p[1] + ref[1]))


def localize(
    sn_rssi: np.ndarray,
    class_model: TrainedClassifier,
    anchors: Sequence[Anchor],
    class_centers: Sequence[PlanarPoint],
    d2d_readings: Optional[Mapping[int, float]] = None,
    threshold: float = DEFAULT_THRESHOLD_DBM,
    node_id: str = "",
) -> LocalizationResult:
    """Classify the SN, then refine inside the class when three or more anchors hear it.

    ``d2d_readings`` maps an index into ``anchors`` to the RSSI that anchor
    measured from the SN over the short-range link.
    """
    cid = predict(class_model, sn_rssi)
    center = class_centers[cid]
    readings = d2d_readings or {}
    used = [i for i in sorted(readings) if in_range(readings[i], threshold) and anchors[i].curve is not None]
    if len(used) >= 3:
        dists = [invert_distance(anchors[i].curve, readings[i]) for i in used]
        try:
            pos = multilaterate([anchors[i].position for i in used], dists)
            return LocalizationResult(Mode.REFINED, cid, pos, len(used), tuple(dists), node_id)
        except IllConditionedError as exc:
            log.warning("node %s: refinement failed (%s); keeping class centre", node_id, exc)
    return LocalizationResult(Mode.CLASS_ONLY, cid, center, len(used), (), node_id)
