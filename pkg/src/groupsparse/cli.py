"""Command-line harness: train / sweep / stability / eval.

A single JSON config fully determines a run; re-running a command with
the same config and seed reproduces byte-identical metric files (timing
is reported separately and never lands in them). Unknown config keys are
rejected with their field path so typos fail fast.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    downsample_balanced,
    gen_parity,
    load_csv_with_manifest,
    load_mnist_idx,
    load_splice,
    load_splice_pair,
    rows_as_groups,
    train_val_split,
    wavelet_dataset,
)
from .losses import LossSpec, inverse_frequency_weights
from .metrics import EvalReport, evaluate, mean_pairwise_jaccard
from .nn import init_network, load_snapshot, save_snapshot
from .optim import TrainConfig, baseline_schedule, train

_TOP_KEYS = {"dataset", "network", "loss", "train", "metrics", "out_dir"}
_DATASET_KEYS = {
    "parity": {"kind", "n_train", "n_test", "seed"},
    "mnist": {
        "kind", "train_images", "train_labels", "test_images", "test_labels",
        "grouping", "holdout", "subset", "seed",
    },
    "splice": {"kind", "train", "test", "balance_per_class", "drop_positions", "seed"},
    "csv": {"kind", "data", "manifest", "impute", "holdout", "seed"},
}
_SPLICE_SOURCE_KEYS = {"path", "label", "labels_path", "inline_labels", "true_path", "false_path"}
_NETWORK_KEYS = {"hidden", "activation"}
_LOSS_KEYS = {"kind", "class_weights"}
_TRAIN_KEYS = {
    "lambda", "batch_size", "lr", "decay", "epochs", "algorithm", "seed",
    "prune_threshold_mode", "baseline_epoch_scaling",
}
_METRIC_NAMES = {"accuracy", "auc", "max_cc"}


class ConfigError(ValueError):
    pass


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"config: {path}: {message}")


def _check_keys(section: dict, allowed: set, path: str) -> None:
    _require(isinstance(section, dict), path, "must be an object")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"config: unknown key {path}.{key}")


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    _check_keys(cfg, _TOP_KEYS, "config")
    _require("dataset" in cfg, "dataset", "section is required")
    _require("network" in cfg, "network", "section is required")

    ds = cfg["dataset"]
    _require(isinstance(ds, dict) and "kind" in ds, "dataset", "needs a 'kind'")
    kind = ds["kind"]
    _require(kind in _DATASET_KEYS, "dataset.kind", f"unknown kind {kind!r}")
    _check_keys(ds, _DATASET_KEYS[kind], "dataset")
    if kind == "splice":
        _require("train" in ds, "dataset.train", "splice needs a train source")
        for name in ("train", "test"):
            if ds.get(name) is not None:
                _check_keys(ds[name], _SPLICE_SOURCE_KEYS, f"dataset.{name}")

    _check_keys(cfg["network"], _NETWORK_KEYS, "network")
    _require("hidden" in cfg["network"], "network.hidden", "is required (list of widths, may be empty)")
    _check_keys(cfg.get("loss", {}), _LOSS_KEYS, "loss")
    _check_keys(cfg.get("train", {}), _TRAIN_KEYS, "train")
    metrics = cfg.get("metrics", sorted(_METRIC_NAMES))
    _require(isinstance(metrics, list), "metrics", "must be a list")
    for m in metrics:
        _require(m in _METRIC_NAMES, "metrics", f"unknown metric {m!r}")
    return cfg


def _load_splice_source(src: dict, drop_positions) -> Dataset:
    if "true_path" in src or "false_path" in src:
        _require("true_path" in src and "false_path" in src, "dataset",
                 "true_path and false_path go together")
        return load_splice_pair(src["true_path"], src["false_path"], drop_positions)
    return load_splice(
        src["path"],
        label=src.get("label"),
        labels_path=src.get("labels_path"),
        inline_labels=src.get("inline_labels", False),
        drop_positions=drop_positions,
    )


def load_dataset_spec(ds_cfg: dict) -> tuple[Dataset, Dataset | None]:
    """Build (train, eval) datasets from a config 'dataset' section."""
    kind = ds_cfg["kind"]
    seed = ds_cfg.get("seed", 0)
    if kind == "parity":
        train_ds = gen_parity(ds_cfg.get("n_train", 10000), seed=seed)
        n_test = ds_cfg.get("n_test", 0)
        eval_ds = gen_parity(n_test, seed=seed + 1) if n_test else None
        return train_ds, eval_ds
    if kind == "mnist":
        train_ds = load_mnist_idx(ds_cfg["train_images"], ds_cfg["train_labels"])
        eval_ds = None
        if ds_cfg.get("test_images"):
            eval_ds = load_mnist_idx(ds_cfg["test_images"], ds_cfg["test_labels"])
        subset = ds_cfg.get("subset", 0)
        if subset:
            rng = np.random.default_rng(seed)
            train_ds = train_ds.subset(rng.choice(train_ds.n, size=subset, replace=False))
        holdout = ds_cfg.get("holdout", 0)
        if holdout:
            train_ds, val = train_val_split(train_ds, holdout, seed=seed)
            eval_ds = eval_ds if eval_ds is not None else val
        if ds_cfg.get("grouping", "rows") == "wavelet":
            train_ds = wavelet_dataset(train_ds)
            eval_ds = wavelet_dataset(eval_ds) if eval_ds is not None else None
        else:
            train_ds = train_ds.with_partition(rows_as_groups())
            eval_ds = eval_ds.with_partition(rows_as_groups()) if eval_ds is not None else None
        return train_ds, eval_ds
    if kind == "splice":
        drop = tuple(ds_cfg.get("drop_positions", (4, 5)))
        train_ds = _load_splice_source(ds_cfg["train"], drop)
        eval_ds = _load_splice_source(ds_cfg["test"], drop) if ds_cfg.get("test") else None
        per_class = ds_cfg.get("balance_per_class")
        if per_class:
            train_ds, rest = downsample_balanced(train_ds, per_class, seed=seed)
            eval_ds = eval_ds if eval_ds is not None else rest
        return train_ds, eval_ds
    if kind == "csv":
        full = load_csv_with_manifest(ds_cfg["data"], ds_cfg["manifest"],
                                      impute_missing=ds_cfg.get("impute", False))
        holdout = ds_cfg.get("holdout", 0)
        if holdout:
            return train_val_split(full, holdout, seed=seed)
        return full, None
    raise ConfigError(f"config: dataset.kind: unknown kind {kind!r}")


def build_loss(loss_cfg: dict, train_ds: Dataset) -> LossSpec:
    kind = loss_cfg.get("kind", "cross_entropy")
    weights = loss_cfg.get("class_weights")
    if weights == "inverse_frequency":
        weights = inverse_frequency_weights(train_ds.y, train_ds.num_classes)
    elif weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
    if kind == "weighted_cross_entropy" and weights is None:
        weights = inverse_frequency_weights(train_ds.y, train_ds.num_classes)
    return LossSpec(kind, weights)


def build_train_config(cfg: dict, loss: LossSpec, k: int, seed_override=None) -> TrainConfig:
    t = cfg.get("train", {})
    tc = TrainConfig(
        lam=t.get("lambda", 0.0),
        batch_size=t.get("batch_size", 100),
        lr=t.get("lr", 0.1),
        decay=t.get("decay", 1.0),
        epochs=t.get("epochs", 1),
        algorithm=t.get("algorithm", "sbcgd"),
        seed=t.get("seed", 0) if seed_override is None else seed_override,
        loss=loss,
        prune_threshold_mode=t.get("prune_threshold_mode", "lambda"),
    )
    if t.get("baseline_epoch_scaling", False):
        if tc.algorithm not in ("sgd", "sgd_tau"):
            raise ConfigError("config: train.baseline_epoch_scaling: only for sgd/sgd_tau")
        tc = baseline_schedule(tc, k)
    return tc


def _report_dict(report: EvalReport | None, wanted) -> dict | None:
    if report is None:
        return None
    doc = report.to_json_dict()
    for name in ("accuracy", "auc", "max_cc"):
        if name not in wanted:
            doc.pop(name, None)
    return doc


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_single(cfg: dict, seed_override=None, out_dir: Path | None = None,
               trace_name="trace.jsonl") -> dict:
    """Train one model per the config; returns the result document."""
    train_ds, eval_ds = load_dataset_spec(cfg["dataset"])
    loss = build_loss(cfg.get("loss", {}), train_ds)
    part = train_ds.partition
    k = part.k if part is not None else 0
    tc = build_train_config(cfg, loss, k, seed_override)

    hidden = [int(h) for h in cfg["network"]["hidden"]]
    dims = [train_ds.p] + hidden + [train_ds.num_classes]
    net = init_network(dims, activation=cfg["network"].get("activation", "relu"),
                       seed=tc.seed, partition=part)

    t0 = time.perf_counter()
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / trace_name, "w", encoding="utf-8") as stream:
            net, mask, traces = train(net, train_ds, part, tc, trace_stream=stream)
    else:
        net, mask, traces = train(net, train_ds, part, tc)
    seconds = time.perf_counter() - t0

    wanted = set(cfg.get("metrics", _METRIC_NAMES))
    train_report = evaluate(net, train_ds.X, train_ds.y, train_ds.num_classes)
    eval_report = (
        evaluate(net, eval_ds.X, eval_ds.y, eval_ds.num_classes) if eval_ds is not None else None
    )
    sparse = mask.sparse_groups() if mask is not None else []
    result = {
        "seed": tc.seed,
        "lambda": tc.lam,
        "algorithm": tc.algorithm,
        "epochs_run": len(traces),
        "sparse_count": len(sparse),
        "sparse_groups": sparse,
        "sparse_group_names": [part.name(i) for i in sparse] if part is not None else [],
        "train_metrics": _report_dict(train_report, wanted),
        "eval_metrics": _report_dict(eval_report, wanted),
        "final_penalty": traces[-1].penalty if traces else None,
    }
    if out_dir is not None:
        save_snapshot(net, out_dir / "snapshot.json")
        _write_json(out_dir / "metrics.json", result)
    result["seconds"] = seconds
    result["_net"] = net
    result["_mask"] = mask
    return result


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out or cfg.get("out_dir", "run-out"))
    result = run_single(cfg, seed_override=args.seed, out_dir=out_dir)
    print(f"trained in {result['seconds']:.1f}s; sparse groups: {result['sparse_groups']}")
    target = result["eval_metrics"] or result["train_metrics"]
    if target and "accuracy" in target:
        print(f"accuracy: {target['accuracy']:.4f}")
    print(f"outputs in {out_dir}")
    return 0


_WORKER_CFG: dict = {}


def _pool_init(cfg_json: str) -> None:
    _WORKER_CFG["cfg"] = json.loads(cfg_json)


def _sweep_row(job) -> dict:
    lam, seed = job
    cfg = _WORKER_CFG["cfg"]
    patched = json.loads(json.dumps(cfg))
    patched.setdefault("train", {})["lambda"] = lam
    t0 = time.perf_counter()
    try:
        result = run_single(patched, seed_override=seed)
        report = result["eval_metrics"] or result["train_metrics"] or {}
        return {
            "lambda": lam,
            "seed": seed,
            "sparse_count": result["sparse_count"],
            "sparse_groups": result["sparse_groups"],
            "accuracy": report.get("accuracy"),
            "auc": report.get("auc"),
            "max_cc": report.get("max_cc"),
            "seconds": time.perf_counter() - t0,
        }
    except Exception as exc:  # row failures recorded, sweep continues
        return {"lambda": lam, "seed": seed, "error": f"{type(exc).__name__}: {exc}",
                "seconds": time.perf_counter() - t0}


def _run_jobs(jobs, worker, cfg_json: str, n_jobs: int):
    if n_jobs <= 1:
        _pool_init(cfg_json)
        return [worker(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs, initializer=_pool_init,
                             initargs=(cfg_json,)) as pool:
        return list(pool.map(worker, jobs))


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    lambdas = [float(tok) for tok in args.lambdas.split(",") if tok.strip()]
    if not lambdas:
        print("sweep needs at least one lambda", file=sys.stderr)
        return 2
    out_dir = Path(args.out or cfg.get("out_dir", "run-out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    base_seed = args.seed if args.seed is not None else cfg.get("train", {}).get("seed", 0)
    # fresh seed-derived init per row unless pinned
    seeds = (
        [base_seed] * len(lambdas)
        if args.pin_seed
        else [int(s.generate_state(1)[0] % (2**31)) for s in np.random.SeedSequence(base_seed).spawn(len(lambdas))]
    )
    jobs = list(zip(lambdas, seeds))
    rows = _run_jobs(jobs, _sweep_row, json.dumps(cfg), args.jobs)
    rows.sort(key=lambda r: r["lambda"])

    csv_path = out_dir / "sweep.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "sparse_count", "sparse_groups", "accuracy",
                         "auc", "max_cc", "seconds"])
        for r in rows:
            if "error" in r:
                writer.writerow([r["lambda"], "", "", "", "", "", f"{r['seconds']:.3f}"])
                continue
            writer.writerow([
                r["lambda"], r["sparse_count"],
                ";".join(str(i) for i in r["sparse_groups"]),
                r["accuracy"], r["auc"], r["max_cc"], f"{r['seconds']:.3f}",
            ])
    _write_json(out_dir / "sweep.json", [{k: v for k, v in r.items() if k != "seconds"}
                                         for r in rows])
    for r in rows:
        if "error" in r:
            print(f"lambda={r['lambda']:g}: FAILED {r['error']}")
        else:
            print(f"lambda={r['lambda']:g}: sparse={r['sparse_count']} "
                  f"accuracy={r['accuracy']}")
    print(f"outputs in {out_dir}")
    return 0


def _stability_row(job) -> dict:
    run_idx, seed = job
    cfg = _WORKER_CFG["cfg"]
    train_ds, _ = load_dataset_spec(cfg["dataset"])
    rng = np.random.default_rng(seed)
    resampled = train_ds.subset(rng.integers(0, train_ds.n, size=train_ds.n))
    loss = build_loss(cfg.get("loss", {}), resampled)
    part = resampled.partition
    tc = build_train_config(cfg, loss, part.k if part else 0, seed_override=seed)
    dims = [resampled.p] + [int(h) for h in cfg["network"]["hidden"]] + [resampled.num_classes]
    net = init_network(dims, activation=cfg["network"].get("activation", "relu"),
                       seed=seed, partition=part)
    _, mask, _ = train(net, resampled, part, tc)
    selected = sorted(set(range(part.k)) - set(mask.sparse_groups())) if mask else []
    return {"run": run_idx, "seed": seed, "selected_groups": selected}


def cmd_stability(args) -> int:
    cfg = load_config(args.config)
    if args.runs < 2:
        print("stability needs at least 2 runs", file=sys.stderr)
        return 2
    out_dir = Path(args.out or cfg.get("out_dir", "run-out"))
    base_seed = args.seed if args.seed is not None else cfg.get("train", {}).get("seed", 0)
    seeds = [int(s.generate_state(1)[0] % (2**31))
             for s in np.random.SeedSequence(base_seed).spawn(args.runs)]
    jobs = list(enumerate(seeds))
    rows = _run_jobs(jobs, _stability_row, json.dumps(cfg), args.jobs)
    rows.sort(key=lambda r: r["run"])
    sets = [set(r["selected_groups"]) for r in rows]
    score = mean_pairwise_jaccard(sets)
    _write_json(out_dir / "stability.json", {
        "mean_pairwise_jaccard": score,
        "selection": "non-sparse (kept) groups per bootstrap run",
        "runs": rows,
    })
    print(f"mean pairwise Jaccard over {args.runs} bootstrap runs: {score:.4f}")
    print(f"outputs in {out_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    net = load_snapshot(args.snapshot)
    train_ds, eval_ds = load_dataset_spec(cfg["dataset"])
    ds = eval_ds if (args.split == "eval" and eval_ds is not None) else train_ds
    if ds.p != net.input_dim:
        print(f"snapshot input dim {net.input_dim} != dataset width {ds.p}", file=sys.stderr)
        return 2
    report = evaluate(net, ds.X, ds.y, ds.num_classes)
    wanted = set(cfg.get("metrics", _METRIC_NAMES))
    part = net.partition
    sparse = net.sparse.sparse_groups() if net.sparse is not None else []
    doc = {
        "split": "eval" if (args.split == "eval" and eval_ds is not None) else "train",
        "metrics": _report_dict(report, wanted),
        "sparse_count": len(sparse),
        "sparse_groups": sparse,
        "per_group": [
            {"index": i, "name": part.name(i), "sparse": bool(net.sparse.flags[i])}
            for i in range(part.k)
        ] if part is not None else [],
    }
    out_dir = Path(args.out or cfg.get("out_dir", "run-out"))
    _write_json(out_dir / "eval.json", doc)
    if args.confusion_csv:
        path = Path(args.confusion_csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([""] + [f"pred_{c}" for c in range(ds.num_classes)])
            for c, row in enumerate(report.confusion):
                writer.writerow([f"true_{c}"] + list(map(int, row)))
    print(json.dumps(doc["metrics"], sort_keys=True))
    print(f"outputs in {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groupsparse",
        description="Train group-sparse dense networks and report which input groups survive.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed override")

    p_train = sub.add_parser("train", help="train one model and write metrics + snapshot")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="train one model per lambda; emit CSV/JSON table")
    common(p_sweep)
    p_sweep.add_argument("--lambdas", required=True, help="comma-separated lambda values")
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--pin-seed", action="store_true",
                         help="reuse the base seed for every row instead of deriving fresh ones")
    p_sweep.set_defaults(func=cmd_sweep)

    p_stab = sub.add_parser("stability", help="bootstrap the training set and report Jaccard stability")
    common(p_stab)
    p_stab.add_argument("--runs", type=int, required=True)
    p_stab.add_argument("--jobs", type=int, default=1)
    p_stab.set_defaults(func=cmd_stability)

    p_eval = sub.add_parser("eval", help="score a snapshot against a dataset")
    common(p_eval)
    p_eval.add_argument("--snapshot", required=True)
    p_eval.add_argument("--split", choices=("train", "eval"), default="eval")
    p_eval.add_argument("--confusion-csv", default=None)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"file not found: {exc.filename}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
