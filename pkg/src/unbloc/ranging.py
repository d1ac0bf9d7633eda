"""RSSI-to-distance regression curves and their inversion.

Two curve families:

* ``Polynomial`` maps RSSI to distance, ``d = a0 + a1*rssi + ... + an*rssi^n``.
* ``PowerSeries`` maps distance to RSSI, ``rssi = a * d**b + c``, stored in
  the shifted form ``(a*b, b, a + c)`` so the ``b -> 0`` limit stays finite.

Either way ``invert_distance`` turns a fresh RSSI reading into a distance
clamped to the curve's ``fit_domain``.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, TextIO

import numpy as np

DEFAULT_DOMAIN = (10.0, 200.0)
MAX_DEGREE = 5
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class RangingError(ValueError):
    pass


class RankDeficientError(RangingError):
    pass


class ConvergenceError(RangingError):
    def __init__(self, msg: str, best: "RangingCurve"):
        super().__init__(msg)
        self.best = best


class CurveKind(str, enum.Enum):
    POLYNOMIAL = "Polynomial"
    POWER = "PowerSeries"


@dataclass(frozen=True)
class RangingSample:
    distance: float
    rssi: float

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError(f"distance must be positive, got {self.distance}")


@dataclass(frozen=True)
class RangingCurve:
    kind: CurveKind
    coefficients: tuple[float, ...]
    fit_domain: tuple[float, float] = DEFAULT_DOMAIN
    residual_rmse: float = 0.0
    rssi_span: Optional[tuple[float, float]] = None  # polynomial input range seen in the fit

    def __post_init__(self):
        lo, hi = self.fit_domain
        if not (0 <= lo < hi):
            raise ValueError(f"empty fit domain {self.fit_domain}")
        if self.kind is CurveKind.POLYNOMIAL and len(self.coefficients) < 2:
            raise ValueError("polynomial curve needs degree >= 1")
        if self.kind is CurveKind.POWER and len(self.coefficients) != 3:
            raise ValueError("power curve needs exactly (a, b, c)")

    def psi(self, rssi):
        """Polynomial distance-from-RSSI map, unclamped."""
        return np.polynomial.polynomial.polyval(rssi, self.coefficients)

    def power_rssi(self, d):
        alpha, b, c_shift = self.coefficients
        return c_shift + alpha * _boxcox(np.asarray(d, dtype=float), b)

    def abc(self) -> tuple[float, float, float]:
        """Power curve as ``(a, b, c)`` in ``a * d**b + c``; infinite when ``b == 0``."""
        if self.kind is not CurveKind.POWER:
            raise RangingError("abc() applies to power curves only")
        alpha, b, c_shift = self.coefficients
        if b == 0:
            return (math.copysign(math.inf, alpha), 0.0, -math.copysign(math.inf, alpha))
        a = alpha / b
        return (a, b, c_shift - a)

    @classmethod
    def power(cls, a: float, b: float, c: float, fit_domain=DEFAULT_DOMAIN, residual_rmse: float = 0.0) -> "RangingCurve":
        """Build a power curve from the plain ``a * d**b + c`` coefficients."""
        if b == 0:
            raise RangingError("b = 0 makes a * d**b + c constant")
        return cls(CurveKind.POWER, (a * b, b, a + c), tuple(fit_domain), residual_rmse)

    def rssi_at(self, d: float) -> float:
        """RSSI the curve associates with distance ``d``."""
        if self.kind is CurveKind.POWER:
            return float(self.power_rssi(d))
        lo, hi = self._span()
        return _solve_scalar(lambda r: float(self.psi(r)), d, lo, hi)

    def _span(self) -> tuple[float, float]:
        if self.rssi_span is None:
            raise RangingError("polynomial curve has no recorded RSSI span")
        return self.rssi_span

    def to_dict(self) -> dict:
        doc = {
            "kind": self.kind.value,
            "coefficients": list(self.coefficients),
            "domain": list(self.fit_domain),
            "residual_rmse": self.residual_rmse,
        }
        if self.rssi_span is not None:
            doc["rssi_span"] = list(self.rssi_span)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RangingCurve":
        span = doc.get("rssi_span")
        return cls(
            CurveKind(doc["kind"]),
            tuple(float(c) for c in doc["coefficients"]),
            tuple(float(v) for v in doc["domain"]),
            float(doc.get("residual_rmse", 0.0)),
            None if span is None else (float(span[0]), float(span[1])),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _bisect(g, target: float, lo: float, hi: float) -> float:
    rising = g(hi) > g(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        gm = g(mid) - target
        if gm == 0:
            return mid
        if (gm < 0) == rising:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _golden(obj, lo: float, hi: float, tol: float = 1e-12) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = obj(c), obj(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = obj(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = obj(d)
    return 0.5 * (a + b)


def _solve_scalar(g, target: float, lo: float, hi: float) -> float:
    """Point of ``[lo, hi]`` where ``g`` is closest to ``target``.

    Bisection when ``g`` is monotone on the interval, golden-section on the
    squared residual otherwise; out-of-range targets clamp to an endpoint.
    """
    grid = np.linspace(lo, hi, 257)
    vals = np.array([g(x) for x in grid])
    steps = np.diff(vals)
    if np.all(steps < 0) or np.all(steps > 0):
        glo, ghi = vals[0], vals[-1]
        if (target - glo) * (target - ghi) > 0:
            return lo if abs(target - glo) <= abs(target - ghi) else hi
        return _bisect(g, target, lo, hi)
    k = int(np.argmin(np.abs(vals - target)))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    return _golden(lambda x: (g(x) - target) ** 2, a, b)


def fit_polynomial(
    samples: Sequence[RangingSample], n: int, fit_domain: tuple[float, float] = DEFAULT_DOMAIN
) -> RangingCurve:
    """Least-squares distance-from-RSSI polynomial of degree ``n``.

    Solved through the normal equations of the column-scaled Vandermonde
    matrix, with one step of iterative refinement.
    """
    if not 1 <= n <= MAX_DEGREE:
        raise RangingError(f"degree must be in [1, {MAX_DEGREE}], got {n}")
    r = np.array([s.rssi for s in samples], dtype=float)
    d = np.array([s.distance for s in samples], dtype=float)
    if len(np.unique(r)) < n + 1:
        raise RankDeficientError(f"degree {n} needs {n + 1} distinct RSSI values, got {len(np.unique(r))}")
    A = np.vander(r, n + 1, increasing=True)
    scale = np.abs(A).max(axis=0)
    As = A / scale
    N = As.T @ As
    try:
        L = np.linalg.cholesky(N)
    except np.linalg.LinAlgError:
        raise RankDeficientError("normal equations are singular") from None

    def solve(rhs):
        return np.linalg.solve(L.T, np.linalg.solve(L, rhs))

    c = solve(As.T @ d)
    c = c + solve(As.T @ (d - As @ c))
    coef = c / scale
    resid = A @ coef - d
    return RangingCurve(
        CurveKind.POLYNOMIAL,
        tuple(float(v) for v in coef),
        tuple(fit_domain),
        float(np.sqrt(np.mean(resid**2))),
        (float(r.min()), float(r.max())),
    )


def _boxcox(d: np.ndarray, b: float) -> np.ndarray:
    """``(d**b - 1) / b``, continuous through ``b = 0`` where it becomes ``ln d``."""
    L = np.log(d)
    if abs(b) < 1e-8:
        return L * (1.0 + 0.5 * b * L)
    return np.expm1(b * L) / b


def _boxcox_db(d: np.ndarray, b: float) -> np.ndarray:
    L = np.log(d)
    if abs(b) < 1e-8:
        return 0.5 * L * L
    return (b * L * np.exp(b * L) - np.expm1(b * L)) / (b * b)


def _power_init(d: np.ndarray, r: np.ndarray) -> list[np.ndarray]:
    """Log-linear starting points ``(scale, exponent, offset)``, one per sign of the power term."""
    out = []
    for sign, c0 in ((-1.0, r.max() + 1.0), (1.0, r.min() - 1.0)):
        z = np.log(sign * (r - c0))
        slope, icpt = np.polyfit(np.log(d), z, 1)
        a, b = sign * math.exp(icpt), slope
        out.append(np.array([a * b, b, c0 + a]))
    return out


def _gauss_newton(d, r, q, max_iter):
    def resid(p):
        return p[2] + p[0] * _boxcox(d, p[1]) - r

    res = resid(q)
    sse = float(res @ res)
    for _ in range(max_iter):
        J = np.column_stack([_boxcox(d, q[1]), q[0] * _boxcox_db(d, q[1]), np.ones_like(d)])
        sv = np.linalg.svd(J, compute_uv=False)
        if sv[-1] <= 1e-12 * sv[0]:
            raise RankDeficientError("power-law Jacobian is rank deficient")
        step = np.linalg.lstsq(J, -res, rcond=None)[0]
        lam = 1.0
        while lam > 1e-10:
            cand = q + lam * step
            cres = resid(cand)
            s = float(cres @ cres)
            if np.isfinite(s) and s < sse:
                break
            lam *= 0.5
        else:
            return q, sse, True  # no descent left: stationary within precision
        done = (sse - s) <= 1e-12 * sse or np.linalg.norm(lam * step) <= 1e-10 * np.linalg.norm(q)
        q, res, sse = cand, cres, s
        if done or sse == 0.0:
            return q, sse, True
    return q, sse, False


def fit_power(
    samples: Sequence[RangingSample], fit_domain: tuple[float, float] = DEFAULT_DOMAIN, max_iter: int = 100
) -> RangingCurve:
    """Fit ``rssi = a * d**b + c`` by Gauss-Newton with step halving.

    The iteration runs on the equivalent ``c' + alpha * (d**b - 1) / b`` with
    ``alpha = a*b`` and ``c' = a + c``, which stays finite as ``b -> 0`` (pure
    log-distance data). Those three numbers are what the curve stores; use
    :meth:`RangingCurve.abc` for the plain form.
    """
    if len(samples) < 3:
        raise RangingError(f"power fit needs at least 3 samples, got {len(samples)}")
    d = np.array([s.distance for s in samples], dtype=float)
    r = np.array([s.rssi for s in samples], dtype=float)
    if np.ptp(r) == 0:
        raise RankDeficientError("RSSI is constant: power-law exponent is unidentifiable")
    if len(np.unique(d)) < 3:
        raise RankDeficientError("power fit needs at least 3 distinct distances")
    best = None
    for q0 in _power_init(d, r):
        try:
            q, sse, ok = _gauss_newton(d, r, q0, max_iter)
        except RankDeficientError:
            continue
        if best is None or sse < best[1]:
            best = (q, sse, ok)
    if best is None:
        raise RankDeficientError("no starting point gave a full-rank Jacobian")
    q, _, ok = best
    curve = RangingCurve(CurveKind.POWER, tuple(float(v) for v in q), tuple(fit_domain))
    est = np.array([invert_distance(curve, v) for v in r])
    curve = RangingCurve(curve.kind, curve.coefficients, curve.fit_domain, float(np.sqrt(np.mean((est - d) ** 2))))
    if not ok:
        raise ConvergenceError(f"Gauss-Newton did not converge in {max_iter} iterations", curve)
    return curve


def invert_distance(curve: RangingCurve, rssi: float) -> float:
    """Distance in ``fit_domain`` whose curve RSSI best matches ``rssi``."""
    if curve is None:
        raise RangingError("curve is not fitted")
    lo, hi = curve.fit_domain
    if curve.kind is CurveKind.POWER:
        return float(_solve_scalar(lambda x: float(curve.power_rssi(x)), rssi, lo, hi))
    slo, shi = curve._span()
    d = float(curve.psi(min(max(rssi, slo), shi)))
    return min(max(d, lo), hi)


def ranging_rmse(estimates, truths) -> float:
    """Root-mean-square ranging error over all anchors and readings."""
    e = np.asarray(estimates, dtype=float)
    t = np.asarray(truths, dtype=float)
    if e.shape != t.shape:
        raise ValueError(f"shape mismatch: {e.shape} vs {t.shape}")
    if e.size == 0:
        raise ValueError("need at least one estimate")
    return float(np.sqrt(np.mean((e - t) ** 2)))


def load_samples(source: TextIO | str) -> list[RangingSample]:
    """Read ``distance_m,rssi_dbm`` CSV rows."""
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.DictReader(source)
    if reader.fieldnames is None or not {"distance_m", "rssi_dbm"} <= set(reader.fieldnames):
        raise ValueError("ranging CSV needs distance_m and rssi_dbm columns")
    out = []
    for rowno, row in enumerate(reader, start=2):
        try:
            out.append(RangingSample(float(row["distance_m"]), float(row["rssi_dbm"])))
        except ValueError as exc:
            raise ValueError(f"row {rowno}: {exc}") from None
    return out
