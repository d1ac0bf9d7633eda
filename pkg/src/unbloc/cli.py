"""Command-line entry point: ``unbloc <simulate|ingest|train|localize|sweep|report>``.

Settings resolve as command-line flags over ``--config`` JSON over built-in
defaults. Every command writes its data files into ``--out`` together with
the effective settings, and prints a one-line JSON summary on stdout.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from collections import defaultdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .classify import Algorithm, KnnConfig, TrainedClassifier, train
from .dataset import (
    DEFAULT_FILL,
    MISSING_SENTINEL,
    MessageSet,
    anchor_split,
    average_k,
    build_fingerprints,
    dump_messages,
    load_messages,
    rank_features,
)
from .evaluate import (
    CampaignConfig,
    EvalSettings,
    build_campaign,
    confusion_from_predictions,
    error_cdf,
    run_sweep,
)
from .forest import ForestConfig
from .geo import ClassPartition, project
from .locate import DEFAULT_THRESHOLD_DBM, Anchor, Mode, localize
from .ranging import fit_polynomial, fit_power, load_samples
from .svm import SvmConfig

log = logging.getLogger("unbloc")


class CliError(Exception):
    pass


DEFAULTS = {
    "seed": None,
    "out": ".",
    "algorithm": "RandomForest",
    "classes": 7,
    "spacing_d": 1600.0,
    "radius_r": None,
    "n_bs": 10,
    "sigma2": None,
    "c_penalty": 1.0,
    "trees": 100,
    "k": 11,
    "train_msgs": None,
    "avg_k": 1,
    "features": None,
    "anchor_radius": 100.0,
    "threshold": DEFAULT_THRESHOLD_DBM,
    "curve": "polynomial",
    "degree": 3,
    "test_nodes": 12,
    "msgs_per_node": 10,
}

# flags that map one-to-one onto settings keys
_FLAG_KEYS = [
    "seed", "out", "algorithm", "classes", "spacing_d", "radius_r", "n_bs", "sigma2", "c_penalty", "trees", "k",
    "train_msgs", "avg_k", "features", "anchor_radius", "threshold", "curve", "degree", "test_nodes", "msgs_per_node",
]


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge defaults, the ``--config`` file and explicit flags, in that order."""
    eff = dict(DEFAULTS)
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise CliError("config file must hold a JSON object")
        doc = {k.replace("-", "_"): v for k, v in doc.items()}
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        eff.update(doc)
    for key in _FLAG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            eff[key] = v
    return eff


def _need_seed(eff: dict) -> int:
    if eff["seed"] is None:
        raise CliError("this command is stochastic: pass --seed or set seed in the config")
    seed = int(eff["seed"])
    if seed < 0:
        raise CliError("seed must be non-negative")
    return seed


def _campaign_config(eff: dict) -> CampaignConfig:
    if int(eff["classes"]) < 1:
        raise CliError(f"need at least one class, got {eff['classes']}")
    train_msgs = eff["train_msgs"] if eff["train_msgs"] is not None else 40
    return CampaignConfig(
        n_classes=int(eff["classes"]),
        spacing_D=float(eff["spacing_d"]),
        radius_r=None if eff["radius_r"] is None else float(eff["radius_r"]),
        n_bs=int(eff["n_bs"]),
        train_msgs=int(train_msgs),
        test_nodes_per_class=int(eff["test_nodes"]),
        msgs_per_test_node=int(eff["msgs_per_node"]),
        anchor_radius=float(eff["anchor_radius"]),
    )


def _algo_config(algo: Algorithm, eff: dict, seed: int):
    if algo is Algorithm.SVM:
        return SvmConfig(sigma2=eff["sigma2"], c_penalty=float(eff["c_penalty"]))
    if algo is Algorithm.RF:
        return ForestConfig(n_trees=int(eff["trees"]), rng_seed=seed)
    return KnnConfig(k=int(eff["k"]))


def _outdir(eff: dict) -> Path:
    out = Path(eff["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_text(path: Optional[str], what: str) -> str:
    if not path:
        raise CliError(f"missing --{what}")
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {what} file {path}: {exc}") from None


def _load_partition(path: Optional[str]) -> ClassPartition:
    return ClassPartition.loads(_read_text(path, "partition"))


def _load_model(path: Optional[str]) -> tuple[TrainedClassifier, Optional[list[int]]]:
    doc = json.loads(_read_text(path, "model"))
    cols = doc.get("columns")
    return TrainedClassifier.from_dict(doc), cols


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_simulate(args, eff: dict) -> dict:
    seed = _need_seed(eff)
    cfg = _campaign_config(eff)
    camp = build_campaign(cfg, seed)
    out = _outdir(eff)
    with open(out / "messages.csv", "w", newline="") as fh:
        dump_messages(camp.messages, fh)
    (out / "partition.json").write_text(camp.partition.dumps() + "\n")
    _write_json(out / "simulate_config.json", {"settings": eff, "campaign": cfg.to_dict()})
    return {"records": len(camp.messages), "nodes": len({r.node_id for r in camp.messages.records}),
            "M": camp.messages.n_bs, "L": camp.partition.n_classes, "out": str(out)}


def cmd_ingest(args, eff: dict) -> dict:
    ms = load_messages(_read_text(args.data, "data"), sentinel=args.sentinel)
    out = _outdir(eff)
    with open(out / "messages.csv", "w", newline="") as fh:
        dump_messages(ms, fh)
    R = ms.rssi_matrix(fill=None)
    summary = {
        "records": len(ms),
        "nodes": len({r.node_id for r in ms.records}),
        "M": ms.n_bs,
        "with_position": sum(r.position is not None for r in ms.records),
        "missing_fraction": float(np.isnan(R).mean()) if R.size else 0.0,
    }
    _write_json(out / "ingest_report.json", {**summary, "settings": eff})
    return summary


def _split(args, eff: dict, seed: int):
    ms = load_messages(_read_text(args.data, "data"))
    part = _load_partition(args.partition)
    split = anchor_split(ms, part, float(eff["anchor_radius"]), seed)
    return ms, part, split


def cmd_train(args, eff: dict) -> dict:
    seed = _need_seed(eff)
    _, part, split = _split(args, eff, seed)
    cols = None
    train_ms = split.train
    if eff["features"] is not None:
        n = int(eff["features"])
        if not 1 <= n <= train_ms.n_bs:
            raise CliError(f"--features must be in [1, {train_ms.n_bs}]")
        cols = sorted(rank_features(train_ms)[:n].tolist())
        train_ms = train_ms.with_columns(cols)
    counts = defaultdict(int)
    for r in train_ms.records:
        counts[r.node_id] += 1
    T = int(eff["train_msgs"]) if eff["train_msgs"] is not None else max(counts.values())
    fps = build_fingerprints(train_ms, split.labels, T)
    if int(eff["avg_k"]) > 1:
        fps = {c: average_k(fm, int(eff["avg_k"])) for c, fm in fps.items()}
    algo = Algorithm.parse(eff["algorithm"])
    t0 = time.perf_counter()
    model = train(algo, _algo_config(algo, eff, seed), fps)
    dt = (time.perf_counter() - t0) * 1e3
    X = np.vstack([fm.rows for _, fm in sorted(fps.items())])
    y = np.concatenate([np.full(len(fm), c) for c, fm in sorted(fps.items())])
    acc = float(np.mean(model.predict_many(X) == y))
    out = _outdir(eff)
    doc = model.to_dict()
    if cols is not None:
        doc["columns"] = cols
    _write_json(out / "model.json", doc)
    report = {
        "algorithm": algo.value,
        "accuracy_on_train": acc,
        "train_time_ms": dt,
        "M": model.feature_count,
        "L": part.n_classes,
        "T": T,
        "config": model.config,
        "columns": cols,
        "settings": eff,
    }
    _write_json(out / "train_report.json", report)
    return {k: report[k] for k in ("algorithm", "accuracy_on_train", "train_time_ms", "M", "L", "T", "config")}


def _latest_per_node(ms: MessageSet) -> dict[str, int]:
    last: dict[str, int] = {}
    for i, r in enumerate(ms.records):
        j = last.get(r.node_id)
        if j is None or r.time_index >= ms.records[j].time_index:
            last[r.node_id] = i
    return last


def _read_d2d(path: str) -> dict[str, dict[int, float]]:
    out: dict[str, dict[int, float]] = defaultdict(dict)
    reader = csv.DictReader(_read_text(path, "d2d").splitlines())
    need = {"node_id", "anchor", "rssi_dbm"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise CliError("d2d CSV needs node_id, anchor and rssi_dbm columns")
    for rowno, row in enumerate(reader, start=2):
        try:
            out[row["node_id"]][int(row["anchor"])] = float(row["rssi_dbm"])
        except ValueError as exc:
            raise CliError(f"d2d row {rowno}: {exc}") from None
    return out


def _anchors(args, eff: dict, part: ClassPartition) -> list[Anchor]:
    if args.anchors:
        doc = json.loads(_read_text(args.anchors, "anchors"))
        return [Anchor.from_dict(a) for a in doc]
    curve = None
    if args.ranging:
        samples = load_samples(_read_text(args.ranging, "ranging"))
        curve = fit_power(samples) if eff["curve"] == "power" else fit_polynomial(samples, int(eff["degree"]))
    return [Anchor(c, p, curve) for c, p in enumerate(part.centers)]


def cmd_localize(args, eff: dict) -> dict:
    model, cols = _load_model(args.model)
    part = _load_partition(args.partition)
    ms = load_messages(_read_text(args.data, "data"))
    if cols is not None:
        ms = ms.with_columns(cols)
    anchors = _anchors(args, eff, part)
    d2d = _read_d2d(args.d2d) if args.d2d else {}
    X = ms.rssi_matrix(DEFAULT_FILL)
    out = _outdir(eff)
    counts = {m.value: 0 for m in Mode}
    with open(out / "results.jsonl", "w") as fh:
        for nid, i in sorted(_latest_per_node(ms).items()):
            res = localize(X[i], model, anchors, part.centers, d2d.get(nid), float(eff["threshold"]), nid)
            counts[res.mode.value] += 1
            fh.write(res.to_json() + "\n")
    summary = {"nodes": sum(counts.values()), **counts}
    _write_json(out / "localize_summary.json", {**summary, "settings": eff, "anchors": [a.to_dict() for a in anchors]})
    return summary


def _parse_values(text: Optional[str]) -> list[float]:
    if not text:
        raise CliError("sweep needs --values, e.g. --values 1,2,3")
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"bad --values {text!r}") from None


def cmd_sweep(args, eff: dict) -> dict:
    seed = _need_seed(eff)
    cfg = _campaign_config(eff)
    algos = [a.strip() for a in str(eff["algorithm"]).split(",")]
    seeds = [seed + i for i in range(args.seeds)]
    base = EvalSettings(
        train_msgs=None if eff["train_msgs"] is None else int(eff["train_msgs"]),
        n_features=None if eff["features"] is None else int(eff["features"]),
        avg_k=int(eff["avg_k"]),
        sigma2=eff["sigma2"],
        c_penalty=float(eff["c_penalty"]),
        n_trees=int(eff["trees"]),
        knn_k=int(eff["k"]),
    )
    res = run_sweep(args.kind, cfg, algos, seeds, _parse_values(args.values), base)
    res.config["settings"] = eff
    out = _outdir(eff)
    (out / "sweep.csv").write_text(res.to_csv())
    _write_json(out / "sweep.json", res.to_dict())
    return {"kind": res.kind.value, "x_values": res.x_values, "accuracy": res.accuracy}


def cmd_report(args, eff: dict) -> dict:
    seed = _need_seed(eff) if eff["seed"] is not None else 0
    model, cols = _load_model(args.model)
    _, part, split = _split(args, eff, seed)
    test = split.test if cols is None else split.test.with_columns(cols)
    pred = model.predict_many(test.rssi_matrix(DEFAULT_FILL))
    truth = np.asarray(split.test_truth)
    cm = confusion_from_predictions(pred, truth, max(model.class_count, part.n_classes))
    errors = [project(part.origin, r.position).dist(part.centers[int(p)]) for r, p in zip(test.records, pred)]
    cdf = error_cdf(errors)
    out = _outdir(eff)
    (out / "confusion.csv").write_text(cm.to_csv())
    (out / "cdf.csv").write_text(cdf.to_csv())
    summary = {"accuracy": cm.accuracy, "test_messages": cm.total, "median_error_m": float(np.median(errors)),
               "frac_below_20m": float(cdf(20.0))}
    _write_json(out / "report.json", {**summary, "settings": eff})
    return summary


COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "localize": cmd_localize,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON settings file (flags override it)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (created if missing)")
    common.add_argument("--algorithm", help="kNN, SVM or RandomForest (comma list for sweep)")
    common.add_argument("--classes", type=int)
    common.add_argument("--spacing-d", dest="spacing_d", type=float)
    common.add_argument("--radius-r", dest="radius_r", type=float)
    common.add_argument("--n-bs", dest="n_bs", type=int)
    common.add_argument("--sigma2", type=float)
    common.add_argument("--c-penalty", dest="c_penalty", type=float)
    common.add_argument("--trees", type=int)
    common.add_argument("--k", type=int)
    common.add_argument("--train-msgs", dest="train_msgs", type=int)
    common.add_argument("--avg-k", dest="avg_k", type=int)
    common.add_argument("--features", type=int)
    common.add_argument("--anchor-radius", dest="anchor_radius", type=float)
    common.add_argument("--test-nodes", dest="test_nodes", type=int)
    common.add_argument("--msgs-per-node", dest="msgs_per_node", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="unbloc", description="UNB fingerprint localisation toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="synthesise a campaign CSV and partition")
    s = sub.add_parser("ingest", parents=[common], help="validate and normalise a message CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--sentinel", type=float, default=MISSING_SENTINEL, help="RSSI value meaning 'not heard'")
    s = sub.add_parser("train", parents=[common], help="train a class model")
    s.add_argument("--data", required=True)
    s.add_argument("--partition", required=True)
    s = sub.add_parser("localize", parents=[common], help="locate SN nodes, refining with D2D ranging")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--partition", required=True)
    s.add_argument("--anchors", help="JSON list of anchors with ranging curves")
    s.add_argument("--ranging", help="distance_m,rssi_dbm CSV fitted into one shared curve")
    s.add_argument("--d2d", help="node_id,anchor,rssi_dbm CSV of D2D readings")
    s.add_argument("--threshold", type=float)
    s.add_argument("--curve", choices=["polynomial", "power"])
    s.add_argument("--degree", type=int)
    s = sub.add_parser("sweep", parents=[common], help="run a seeded parameter sweep")
    s.add_argument("--kind", required=True)
    s.add_argument("--values", required=True, help="comma-separated x values")
    s.add_argument("--seeds", type=int, default=10, help="number of seeds, counting up from --seed")
    s = sub.add_parser("report", parents=[common], help="confusion matrix and error CDF on the test split")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--partition", required=True)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        eff = resolve_settings(args)
        summary = COMMANDS[args.command](args, eff)
    except Exception as exc:  # every failure becomes a nonzero exit with a message on stderr
        if args.verbose:
            log.exception("command failed")
        print(f"unbloc {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
