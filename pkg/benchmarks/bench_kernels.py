"""Compare the compiled and numpy kernels on forest and SVM training.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Prints one line per (workload, backend) with the best wall-clock time and
checks that both backends produce the same model.
"""
import argparse
import time

import numpy as np

from unbloc import kernels
from unbloc.dataset import anchor_split, build_fingerprints
from unbloc.evaluate import CampaignConfig, build_campaign
from unbloc.forest import ForestConfig, RandomForest
from unbloc.svm import SvmConfig, SvmModel


def training_matrix(n_bs):
    camp = build_campaign(CampaignConfig(n_bs=n_bs, bs_ring=(1500.0, 9000.0)), 0)
    sp = anchor_split(camp.messages, camp.partition, 100.0, 0)
    fps = build_fingerprints(sp.train, sp.labels, 40)
    X = np.vstack([f.rows for _, f in sorted(fps.items())])
    y = np.concatenate([np.full(len(f), c) for c, f in sorted(fps.items())])
    return X, y


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if len(backends) < 2:
        print("compiled kernels not built; only the numpy backend is available")
    X, y = training_matrix(58)
    print(f"training matrix {X.shape[0]}x{X.shape[1]}, {len(np.unique(y))} classes")
    workloads = {
        "forest 100 trees": lambda b: RandomForest.fit(X, y, ForestConfig(n_trees=100), backend=b),
        "svm one-vs-one": lambda b: SvmModel.fit(X, y, SvmConfig(), backend=b),
    }
    for name, fit in workloads.items():
        results = {}
        for b in backends:
            dt, model = best_of(lambda: fit(b), args.repeat)
            results[b] = (dt, model)
            print(f"{name:18s} {b:7s} {dt * 1e3:9.1f} ms")
        if len(results) == 2:
            a, p = results["cython"][1], results["python"][1]
            same = np.array_equal(a.predict(X), p.predict(X))
            print(f"{name:18s} speedup {results['python'][0] / results['cython'][0]:.1f}x, identical predictions: {same}")


if __name__ == "__main__":
    main()
