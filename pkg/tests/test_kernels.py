"""The compiled and numpy kernels must agree exactly, and both must match brute-force oracles."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from unbloc import kernels
from unbloc.svm import rbf_matrix

BACKENDS = kernels.available_backends()


def brute_split(X, idx, y, order, max_features, n_classes):
    best = (-1, 0.0, -np.inf)
    used = 0
    for f in order:
        col = X[idx, f]
        if col.max() == col.min():
            continue
        if used == max_features:
            break
        used += 1
        vals = np.unique(col)
        for lo, hi in zip(vals[:-1], vals[1:]):
            t = (lo + hi) / 2.0
            if t == hi:
                t = lo
            left = col <= t
            cl = np.bincount(y[idx][left], minlength=n_classes)
            cr = np.bincount(y[idx][~left], minlength=n_classes)
            s = (cl @ cl) / left.sum() + (cr @ cr) / (~left).sum()
            if s > best[2]:
                best = (int(f), float(t), float(s))
    return best


def split_case(draw_seed, n, M, n_classes, levels):
    rng = np.random.default_rng(draw_seed)
    X = rng.integers(0, levels, size=(n + 3, M)).astype(float) - 100.0
    y = rng.integers(0, n_classes, size=n + 3).astype(np.intp)
    idx = np.sort(rng.integers(0, n + 3, size=n)).astype(np.intp)
    order = rng.permutation(M).astype(np.intp)
    return X, idx, y, order


@pytest.mark.parametrize("backend", BACKENDS)
@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 30), st.integers(1, 6), st.integers(2, 4), st.integers(1, 6), st.integers(1, 6))
def test_best_split_matches_brute_force(backend, seed, n, M, n_classes, levels, mf):
    X, idx, y, order = split_case(seed, n, M, n_classes, levels)
    impl = kernels.get_backend(backend)
    f, t, s = impl.best_split(X, idx, y, order, mf, n_classes)
    bf, bt, bs = brute_split(X, idx, y, order, mf, n_classes)
    assert f == bf
    if f >= 0:
        assert t == bt
        assert s == pytest.approx(bs, rel=1e-12)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 60), st.integers(1, 8))
def test_best_split_backends_identical(seed, n, M):
    rng = np.random.default_rng(seed)
    X = rng.normal(-90, 8, size=(n, M)).round(1)
    y = rng.integers(0, 3, size=n).astype(np.intp)
    idx = np.arange(n, dtype=np.intp)
    order = rng.permutation(M).astype(np.intp)
    a = kernels.get_backend("cython").best_split(X, idx, y, order, M, 3)
    b = kernels.get_backend("python").best_split(X, idx, y, order, M, 3)
    assert a == b


def test_best_split_no_split_cases():
    impl = kernels.get_backend()
    X = np.ones((4, 2))
    y = np.array([0, 1, 0, 1], dtype=np.intp)
    f, _, _ = impl.best_split(X, np.arange(4, dtype=np.intp), y, np.arange(2, dtype=np.intp), 2, 2)
    assert f == -1
    f, _, _ = impl.best_split(X, np.array([1], dtype=np.intp), y, np.arange(2, dtype=np.intp), 2, 2)
    assert f == -1


def test_constant_features_do_not_use_up_the_budget():
    X = np.array([[5.0, 0.0], [5.0, 1.0], [5.0, 2.0], [5.0, 3.0]])
    y = np.array([0, 0, 1, 1], dtype=np.intp)
    for b in BACKENDS:
        f, t, _ = kernels.get_backend(b).best_split(X, np.arange(4, dtype=np.intp), y, np.array([0, 1], dtype=np.intp), 1, 2)
        assert (f, t) == (1, 1.5)


def _svm_problem(seed, n, sigma2=2.0):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(n, 3))
    y = np.where(Z[:, 0] + 0.5 * rng.normal(size=n) > 0, 1.0, -1.0)
    if abs(y.sum()) == n:
        y[0] = -y[0]
    Q = np.ascontiguousarray(np.outer(y, y) * rbf_matrix(Z, Z, sigma2))
    return Q, y


def kkt_violation(Q, y, alpha, C):
    G = Q @ alpha - 1.0
    v = -y * G
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    return v[up].max() - v[low].min()


@pytest.mark.parametrize("backend", BACKENDS)
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(4, 60), st.sampled_from([0.1, 1.0, 10.0]))
def test_smo_reaches_kkt(backend, seed, n, C):
    Q, y = _svm_problem(seed, n)
    alpha, rho, it = kernels.get_backend(backend).smo_solve(Q, y, C, 1e-3, 100_000)
    alpha = np.asarray(alpha)
    assert np.all(alpha >= 0) and np.all(alpha <= C)
    assert abs(alpha @ y) < 1e-9 * max(1.0, C * n)
    assert kkt_violation(Q, y, alpha, C) < 1e-3
    assert it < 100_000


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(4, 80))
def test_smo_backends_identical(seed, n):
    Q, y = _svm_problem(seed, n)
    a1, r1, i1 = kernels.get_backend("cython").smo_solve(Q, y, 1.0, 1e-3, 50_000)
    a2, r2, i2 = kernels.get_backend("python").smo_solve(Q, y, 1.0, 1e-3, 50_000)
    assert np.array_equal(np.asarray(a1), a2) and r1 == r2 and i1 == i2


def test_smo_iteration_cap():
    Q, y = _svm_problem(1, 40)
    _, _, it = kernels.get_backend().smo_solve(Q, y, 1.0, 1e-12, 3)
    assert it == 3


def test_backend_selection():
    assert kernels.BACKEND in ("cython", "python")
    assert kernels.get_backend("python").__name__.endswith("_pykernels")
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_fallback_forced_by_environment():
    import os
    import subprocess
    import sys

    env = dict(os.environ, UNBLOC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import unbloc.kernels as k; print(k.BACKEND)"], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
