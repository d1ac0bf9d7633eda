"""Numpy reference implementations of the hot loops (used when the extension is absent).

best_split
    Scan candidate features in ``order``; constant features are skipped and do
    not count towards ``max_features``. A split at a threshold sends ``x <= t``
    left. Among valid splits (between distinct sorted values) the one
    maximising ``sum(cl**2)/nl + sum(cr**2)/nr`` wins, which is the same as
    minimising the weighted Gini impurity. Ties keep the earliest feature in
    ``order`` and then the lowest threshold. Returns ``(feature, threshold,
    score)`` with ``feature = -1`` when no split exists.

smo_solve
    Sequential minimal optimisation of the C-SVC dual ``min 1/2 a'Qa - sum(a)``
    subject to ``0 <= a <= C`` and ``y'a = 0``, where ``Q = yy' * K``. The
    working pair is the maximal violating pair; the loop stops when the KKT gap
    drops below ``tol`` or after ``max_iter`` updates. Returns ``(alpha, rho,
    n_iter)``; the decision value is ``sum(a * y * K(x_i, x)) - rho``.
"""
from __future__ import annotations

import numpy as np

_TAU = 1e-12


def best_split(X, idx, y, order, max_features, n_classes):
    n = len(idx)
    if n < 2:
        return -1, 0.0, -np.inf
    sub = X[np.ix_(idx, order)]
    nonconst = np.flatnonzero(sub.max(axis=0) > sub.min(axis=0))[:max_features]
    if len(nonconst) == 0:
        return -1, 0.0, -np.inf
    F = sub[:, nonconst]
    srt = np.argsort(F, axis=0, kind="stable")
    V = np.take_along_axis(F, srt, axis=0)
    Y = y[idx][srt]  # (n, f)
    onehot = Y[:, :, None] == np.arange(n_classes)
    cl = np.cumsum(onehot, axis=0)[:-1].astype(np.int64)  # left counts after i+1 samples
    total = onehot.sum(axis=0).astype(np.int64)
    cr = total[None] - cl
    sl = (cl * cl).sum(axis=2)
    sr = (cr * cr).sum(axis=2)
    nl = np.arange(1, n, dtype=np.int64)[:, None]
    score = sl.astype(float) / nl.astype(float) + sr.astype(float) / (n - nl).astype(float)
    valid = V[:-1] < V[1:]
    score = np.where(valid, score, -np.inf)
    flat = score.T.ravel()  # feature-major, thresholds ascending
    k = int(np.argmax(flat))
    fpos, i = divmod(k, n - 1)
    lo, hi = V[i, fpos], V[i + 1, fpos]
    t = (lo + hi) / 2.0
    if t == hi:
        t = lo
    return int(order[nonconst[fpos]]), float(t), float(flat[k])


def smo_solve(Q, y, C, tol, max_iter):
    n = len(y)
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0
    it = 0
    while it < max_iter:
        v = -y * G
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        if not up.any() or not low.any():
            break
        i = int(np.argmax(np.where(up, v, -np.inf)))
        j = int(np.argmin(np.where(low, v, np.inf)))
        if v[i] - v[j] < tol:
            break
        it += 1
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = Q[i, i] + Q[j, j] + 2.0 * Q[i, j]
            if quad <= 0:
                quad = _TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
            if quad <= 0:
                quad = _TAU
            delta = (G[i] - G[j]) / quad
            s = ai + aj
            ai -= delta
            aj += delta
            if s > C:
                if ai > C:
                    ai, aj = C, s - C
            elif aj < 0:
                aj, ai = 0.0, s
            if s > C:
                if aj > C:
                    aj, ai = C, s - C
            elif ai < 0:
                ai, aj = 0.0, s
        dai = ai - alpha[i]
        daj = aj - alpha[j]
        alpha[i], alpha[j] = ai, aj
        G += Q[i] * dai + Q[j] * daj

    yG = y * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        total = 0.0
        for val in yG[free]:
            total += float(val)
        rho = total / int(free.sum())
    else:
        ub_mask = (at_upper & ~pos) | (at_lower & pos)
        lb_mask = (at_upper & pos) | (at_lower & ~pos)
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2.0
    return alpha, float(rho), it
