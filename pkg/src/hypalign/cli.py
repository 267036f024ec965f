"""Experiment harness: dataset generation, training, sweeps, analyses.

Everything is driven by one JSON config with dataset / task / model /
train / sweep sections. The config is schema-checked up front (unknown
keys are errors, with the path to the offending key), and a hash of the
canonical config is stamped into every output so runs can be traced back
to their exact inputs. Sweeps are resumable: a run whose output file
already exists is skipped unless --force is given.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from . import analysis as an
from . import models as mo
from . import tasks as tk
from .errors import (ConfigError, DataError, DimensionError, HypalignError,
                     ManifoldError, NumericError)
from .graphs import (Graph, add_gaussian_noise, balanced_tree,
                     diffused_tree_features, grid_graph, load_edge_list,
                     load_features_csv, multi_branch_tree,
                     random_connected_graph, random_tree,
                     sparse_gaussian_features)
from .manifold import LORENTZ, POINCARE, ManifoldSpec, lorentz_to_poincare_rows

_EXIT_CODES = ((ConfigError, 2), (DimensionError, 2), (DataError, 3),
               (NumericError, 4), (ManifoldError, 4))

_PRIMARY_METRIC = {"pdp": "stress", "nr": "mae", "lp": "roc_auc", "nc": "macro_f1"}
_METRIC_MODE = {"stress": "min", "normalized_stress": "min", "mae": "min",
                "loss": "min", "roc_auc": "max", "ap": "max",
                "macro_f1": "max", "accuracy": "max", "best_val": "min"}


# ---------------------------------------------------------------------------
# config schema

def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


_FEATURE_KEYS = {
    "kind": (True, lambda v: v in ("sparse_gaussian", "diffused", "file")),
    "dim": (False, lambda v: _is_int(v) and v > 0),
    "density": (False, lambda v: _is_num(v) and 0 < v <= 1),
    "gamma": (False, lambda v: _is_num(v) and v >= 0),
    "noise_sigma": (False, lambda v: _is_num(v) and v >= 0),
    "path": (False, lambda v: isinstance(v, str)),
}

_LABEL_KEYS = {
    "kind": (True, lambda v: v in ("depth", "file")),
    "root": (False, _is_int),
    "path": (False, lambda v: isinstance(v, str)),
}

_DATASET_KEYS = {
    "kind": (True, lambda v: v in ("balanced_tree", "multi_branch_tree", "grid",
                                   "random_tree", "random_graph", "files")),
    "branching": (False, lambda v: _is_int(v) and v >= 1),
    "levels": (False, lambda v: _is_int(v) and v >= 0),
    "widths": (False, lambda v: isinstance(v, list) and len(v) > 0
               and all(_is_int(x) and x >= 1 for x in v)),
    "rows": (False, lambda v: _is_int(v) and v >= 1),
    "cols": (False, lambda v: _is_int(v) and v >= 1),
    "n": (False, lambda v: _is_int(v) and v >= 1),
    "extra_edge_prob": (False, lambda v: _is_num(v) and 0 <= v <= 1),
    "edges": (False, lambda v: isinstance(v, str)),
    "features": (True, dict),
    "labels": (False, dict),
    "seed": (False, _is_int),
}

_TASK_KEYS = {
    "kind": (True, lambda v: v in tk.TASKS),
    "anchor": (False, _is_int),
    "beta": (False, lambda v: _is_num(v) and v > 0),
    "per_class": (False, lambda v: _is_int(v) and v >= 1),
    "val_total": (False, lambda v: _is_int(v) and v >= 1),
    "scheme": (False, lambda v: v in ("fixed", "ratio")),
    "split_ratios": (False, lambda v: isinstance(v, list) and len(v) == 3
                     and all(_is_num(x) and x > 0 for x in v)),
    "permute_targets": (False, lambda v: isinstance(v, bool)),
}

_MODEL_KEYS = {
    "arch": (True, lambda v: v in mo.ARCHS),
    "out_dim": (True, lambda v: _is_int(v) and v >= 1),
    "hidden_dim": (False, lambda v: _is_int(v) and v >= 1),
    "num_layers": (False, lambda v: _is_int(v) and v >= 1),
    "activation": (False, lambda v: v in ("relu", "leaky_relu", "tanh", "identity")),
    "dropout": (False, lambda v: _is_num(v) and 0 <= v < 1),
    "heads": (False, lambda v: _is_int(v) and v >= 1),
    "curvature": (False, lambda v: _is_num(v) and v > 0),
    "learnable_curvature": (False, lambda v: isinstance(v, bool)),
    "lorentz_attention": (False, lambda v: isinstance(v, bool)),
    "bias": (False, lambda v: isinstance(v, bool)),
}

_TRAIN_KEYS = {
    "lr": (False, lambda v: _is_num(v) and v > 0),
    "max_epochs": (False, lambda v: _is_int(v) and v >= 1),
    "min_epochs": (False, lambda v: _is_int(v) and v >= 1),
    "patience": (False, lambda v: _is_int(v) and v >= 1),
    "eval_every": (False, lambda v: _is_int(v) and v >= 1),
    "weight_decay": (False, lambda v: _is_num(v) and v >= 0),
    "grad_clip": (False, lambda v: _is_num(v) and v > 0),
    "freeze_fermi": (False, lambda v: isinstance(v, bool)),
    "nc_loss": (False, lambda v: v in ("ce", "hinge")),
}

_SWEEP_PATHS = ("model.arch", "model.out_dim", "model.hidden_dim",
                "model.num_layers", "model.curvature", "model.dropout",
                "model.heads", "train.lr", "dataset.features.gamma",
                "dataset.features.noise_sigma", "dataset.features.density",
                "dataset.seed")

_TOP_KEYS = {
    "dataset": (True, dict),
    "task": (True, dict),
    "model": (False, dict),
    "train": (False, dict),
    "sweep": (False, dict),
    "seeds": (False, lambda v: isinstance(v, list) and all(_is_int(x) for x in v)),
}


def _check_block(block, schema, path):
    if not isinstance(block, dict):
        raise ConfigError(f"{path}: expected an object")
    for key, value in block.items():
        if key not in schema:
            raise ConfigError(f"{path}.{key}: unknown key")
        required, check = schema[key]
        if check is dict:
            if not isinstance(value, dict):
                raise ConfigError(f"{path}.{key}: expected an object")
        elif not check(value):
            raise ConfigError(f"{path}.{key}: invalid value {value!r}")
    for key, (required, _) in schema.items():
        if required and key not in block:
            raise ConfigError(f"{path}.{key}: required key missing")


def validate_config(cfg: dict, need_model: bool = True) -> dict:
    _check_block(cfg, _TOP_KEYS, "config")
    _check_block(cfg["dataset"], _DATASET_KEYS, "config.dataset")
    _check_block(cfg["dataset"]["features"], _FEATURE_KEYS, "config.dataset.features")
    if "labels" in cfg["dataset"]:
        _check_block(cfg["dataset"]["labels"], _LABEL_KEYS, "config.dataset.labels")
    _check_block(cfg["task"], _TASK_KEYS, "config.task")
    if need_model or "model" in cfg:
        if "model" not in cfg:
            raise ConfigError("config.model: required key missing")
        _check_block(cfg["model"], _MODEL_KEYS, "config.model")
    if "train" in cfg:
        _check_block(cfg["train"], _TRAIN_KEYS, "config.train")
    if "sweep" in cfg:
        for key, value in cfg["sweep"].items():
            if key not in _SWEEP_PATHS:
                raise ConfigError(f"config.sweep.{key}: not a sweepable setting "
                                  f"(choose from {', '.join(_SWEEP_PATHS)})")
            if not isinstance(value, list) or not value:
                raise ConfigError(f"config.sweep.{key}: expected a nonempty list")
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def load_config(path: str, need_model: bool = True) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except ValueError as e:
        raise ConfigError(f"{path}: not valid JSON: {e}") from e
    return validate_config(cfg, need_model=need_model)


# ---------------------------------------------------------------------------
# dataset construction

def _build_graph(ds: dict) -> Graph:
    kind = ds["kind"]
    seed = ds.get("seed", 0)

    def need(*keys):
        for k in keys:
            if k not in ds:
                raise ConfigError(f"config.dataset.{k}: required for kind {kind!r}")

    if kind == "balanced_tree":
        need("branching", "levels")
        return balanced_tree(ds["branching"], ds["levels"])
    if kind == "multi_branch_tree":
        need("widths")
        return multi_branch_tree(tuple(ds["widths"]))
    if kind == "grid":
        need("rows", "cols")
        return grid_graph(ds["rows"], ds["cols"])
    if kind == "random_tree":
        need("n")
        return random_tree(ds["n"], np.random.default_rng(seed))
    if kind == "random_graph":
        need("n", "extra_edge_prob")
        return random_connected_graph(ds["n"], ds["extra_edge_prob"],
                                      np.random.default_rng(seed))
    need("edges")
    return load_edge_list(ds["edges"])


def _build_features(ds: dict, graph: Graph) -> np.ndarray:
    f = ds["features"]
    seed = ds.get("seed", 0)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, 100]))
    if f["kind"] == "sparse_gaussian":
        if "dim" not in f:
            raise ConfigError("config.dataset.features.dim: required")
        X = sparse_gaussian_features(graph.n, f["dim"], rng,
                                     density=f.get("density", 0.1))
    elif f["kind"] == "diffused":
        if "dim" not in f:
            raise ConfigError("config.dataset.features.dim: required")
        X = diffused_tree_features(graph, f["dim"], f.get("gamma", 0.0), rng)
    else:
        if "path" not in f:
            raise ConfigError("config.dataset.features.path: required")
        X = load_features_csv(f["path"])
        if X.shape[0] != graph.n:
            raise DataError(f"feature file has {X.shape[0]} rows, graph has {graph.n} nodes")
    sigma = f.get("noise_sigma", 0.0)
    if sigma:
        X = add_gaussian_noise(X, sigma, _noise_seed(seed))
    return X


def _noise_seed(seed: int) -> int:
    return int(np.random.SeedSequence(entropy=[seed, 101]).generate_state(1)[0])


def _build_labels(ds: dict, graph: Graph) -> np.ndarray | None:
    lb = ds.get("labels")
    if lb is None:
        return None
    if lb["kind"] == "depth":
        d = graph.bfs(lb.get("root", 0))
        if np.any(d < 0):
            raise DataError("label root does not reach every node")
        return d.astype(np.int64)
    if "path" not in lb:
        raise ConfigError("config.dataset.labels.path: required")
    try:
        y = np.loadtxt(lb["path"], dtype=np.int64, ndmin=1)
    except ValueError as e:
        raise DataError(f"{lb['path']}: {e}") from e
    return y


def build_dataset(ds: dict):
    graph = _build_graph(ds)
    X = _build_features(ds, graph)
    y = _build_labels(ds, graph)
    return graph, X, y


def build_task_data(cfg: dict, graph: Graph, X: np.ndarray,
                    y: np.ndarray | None, seed: int):
    t = cfg["task"]
    kind = t["kind"]
    if kind == "pdp":
        return tk.build_pdp(graph, X, seed, ratios=tuple(t.get("split_ratios", (0.70, 0.15, 0.15))))
    if kind == "nr":
        return tk.build_nr(graph, X, seed, anchor=t.get("anchor", 0),
                           beta=t.get("beta", 1.0), per_class=t.get("per_class", 20),
                           val_total=t.get("val_total", 500),
                           permute=t.get("permute_targets", False))
    if kind == "lp":
        return tk.build_lp(graph, X, seed, ratios=tuple(t.get("split_ratios", (0.85, 0.05, 0.10))))
    if y is None:
        raise ConfigError("config.dataset.labels: required for node classification")
    return tk.build_nc(graph, X, y, seed, scheme=t.get("scheme", "fixed"),
                       per_class=t.get("per_class", 20), val_total=t.get("val_total", 500),
                       ratios=tuple(t.get("split_ratios", (0.70, 0.15, 0.15))),
                       permute=t.get("permute_targets", False))


def _model_config(cfg: dict, in_dim: int) -> mo.ModelConfig:
    m = cfg["model"]
    return mo.ModelConfig(
        arch=m["arch"], in_dim=in_dim, out_dim=m["out_dim"],
        hidden_dim=m.get("hidden_dim", 16), num_layers=m.get("num_layers", 2),
        activation=m.get("activation", "relu"), dropout=m.get("dropout", 0.0),
        heads=m.get("heads", 1), curvature=m.get("curvature", 1.0),
        learnable_curvature=m.get("learnable_curvature", False),
        lorentz_attention=m.get("lorentz_attention", False),
        bias=m.get("bias", True))


def _train_config(cfg: dict, seed: int) -> tk.TrainConfig:
    t = cfg.get("train", {})
    return tk.TrainConfig(
        lr=t.get("lr", 0.01), max_epochs=t.get("max_epochs", 5000),
        min_epochs=t.get("min_epochs", 100), patience=t.get("patience", 500),
        eval_every=t.get("eval_every", 1), weight_decay=t.get("weight_decay", 0.0),
        grad_clip=t.get("grad_clip"), seed=seed,
        freeze_fermi=t.get("freeze_fermi", False), nc_loss=t.get("nc_loss", "ce"))


# ---------------------------------------------------------------------------
# run execution

def _set_path(cfg: dict, dotted: str, value):
    parts = dotted.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def _point_tag(overrides: dict) -> str:
    if not overrides:
        return "base"
    return "__".join(f"{k.split('.')[-1]}={v}" for k, v in sorted(overrides.items()))


def run_single(cfg: dict, overrides: dict, seed: int,
               ckpt_prefix: str | None = None) -> dict:
    """One training run; returns the RunResult payload. When a checkpoint
    prefix is given the trained parameters are written next to the run."""
    cfg = json.loads(json.dumps(cfg))  # deep copy, keeps workers isolated
    for path, value in overrides.items():
        _set_path(cfg, path, value)
    graph, X, y = build_dataset(cfg["dataset"])
    data = build_task_data(cfg, graph, X, y, seed)
    model_cfg = _model_config(cfg, X.shape[1])
    result = tk.train(model_cfg, data, _train_config(cfg, seed))
    payload = result.summary()
    payload["overrides"] = dict(overrides)
    if ckpt_prefix is not None:
        tk.save_checkpoint(
            ckpt_prefix,
            {**{f"model.{k}": v for k, v in result.param_data.items()},
             **{f"dec.{k}": v for k, v in result.decoder_data.items()}},
            {"arch": result.arch, "task": result.task, "seed": seed,
             "config_hash": config_hash(cfg)})
    return payload


def _seed_list(args, cfg: dict) -> list[int]:
    if getattr(args, "seed_list", None):
        return [int(s) for s in args.seed_list.split(",")]
    if getattr(args, "seeds", None):
        return list(range(args.seeds))
    if "seeds" in cfg:
        return list(cfg["seeds"])
    return [0]


def _sweep_points(cfg: dict) -> list[dict]:
    sweep = cfg.get("sweep", {})
    points = [{}]
    for path in sorted(sweep):
        points = [{**pt, path: v} for pt in points for v in sweep[path]]
    return points


def _jobs(args) -> int:
    jobs = getattr(args, "jobs", 1) or 1
    cap = os.environ.get("HYPALIGN_THREADS")
    if cap:
        try:
            jobs = min(jobs, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"HYPALIGN_THREADS must be an integer, got {cap!r}")
    return jobs


def _pool_entry(payload):
    cfg, overrides, seed, ckpt_prefix = payload
    try:
        return run_single(cfg, overrides, seed, ckpt_prefix), None
    except HypalignError as e:
        return None, f"{type(e).__name__}: {e}"


def _execute_runs(cfg: dict, points: list[dict], seeds: list[int],
                  out_dir: str, force: bool, jobs: int,
                  save_params: bool) -> list[dict]:
    runs_dir = os.path.join(out_dir, "runs")
    os.makedirs(runs_dir, exist_ok=True)
    h = config_hash(cfg)[:8]
    todo = []
    records = []
    for pt in points:
        for seed in seeds:
            tag = _point_tag(pt)
            path = os.path.join(runs_dir, f"{h}__{tag}__s{seed}.json")
            if os.path.exists(path) and not force:
                with open(path) as fh:
                    records.append(json.load(fh))
                continue
            prefix = path[:-len(".json")] if save_params else None
            todo.append((pt, seed, path, prefix))

    def finish(pt, seed, path, payload, err):
        rec = {"config_hash": config_hash(cfg), "seed": seed, "version": __version__,
               "tag": _point_tag(pt)}
        if err is None:
            rec.update(payload)
        else:
            rec["error"] = err
            print(f"run {os.path.basename(path)} failed: {err}", file=sys.stderr)
        with open(path, "w") as fh:
            json.dump(rec, fh, indent=1, sort_keys=True)
        records.append(rec)

    if jobs > 1 and len(todo) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [(pt, seed, path,
                     pool.submit(_pool_entry, (cfg, pt, seed, prefix)))
                    for pt, seed, path, prefix in todo]
            for pt, seed, path, fut in futs:
                payload, err = fut.result()
                finish(pt, seed, path, payload, err)
    else:
        for pt, seed, path, prefix in todo:
            payload, err = _pool_entry((cfg, pt, seed, prefix))
            finish(pt, seed, path, payload, err)
    return records


def _aggregate(records: list[dict], out_dir: str, cfg: dict) -> str:
    """Mean and sample standard deviation per sweep point and metric."""
    groups: dict[str, list[dict]] = {}
    for rec in records:
        if "error" in rec:
            continue
        groups.setdefault(rec["tag"], []).append(rec)
    rows = []
    for tag in sorted(groups):
        recs = groups[tag]
        metrics = {}
        for rec in recs:
            for name, value in rec["test_metrics"].items():
                metrics.setdefault(name, []).append(float(value))
            metrics.setdefault("best_val", []).append(float(rec["best_val"]))
        for name in sorted(metrics):
            vals = np.array(metrics[name])
            std = float(np.std(vals, ddof=1)) if vals.shape[0] > 1 else 0.0
            rows.append({"group": tag, "metric": name, "mean": float(vals.mean()),
                         "std": std, "n": vals.shape[0]})
    path = os.path.join(out_dir, "aggregate.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["group", "metric", "mean", "std", "n"])
        writer.writeheader()
        for row in rows:
            row = dict(row)
            row["mean"] = f"{row['mean']:.10g}"
            row["std"] = f"{row['std']:.10g}"
            writer.writerow(row)
    return path


def _advantage_report(records: list[dict], cfg: dict, out_dir: str) -> dict | None:
    """When architectures were swept, compare the best hyperbolic and best
    Euclidean family means on the task's primary metric. The advantage flag
    requires separation by more than the larger of the two sample stds."""
    by_arch: dict[str, list[float]] = {}
    metric = _PRIMARY_METRIC[cfg["task"]["kind"]]
    for rec in records:
        if "error" in rec or metric not in rec.get("test_metrics", {}):
            continue
        by_arch.setdefault(rec["arch"], []).append(float(rec["test_metrics"][metric]))
    euc = {a: v for a, v in by_arch.items() if a in mo.EUCLIDEAN_ARCHS}
    hyp = {a: v for a, v in by_arch.items() if a not in mo.EUCLIDEAN_ARCHS}
    if not euc or not hyp:
        return None
    lower_better = _METRIC_MODE[metric] == "min"
    sign = 1.0 if lower_better else -1.0

    def best(family):
        stats = {a: (float(np.mean(v)),
                     float(np.std(v, ddof=1)) if len(v) > 1 else 0.0)
                 for a, v in family.items()}
        arch = min(stats, key=lambda a: sign * stats[a][0])
        return arch, stats[arch]

    e_arch, (e_mean, e_std) = best(euc)
    h_arch, (h_mean, h_std) = best(hyp)
    margin = max(e_std, h_std)
    advantage = sign * h_mean < sign * e_mean - margin
    report = {"metric": metric, "best_euclidean": {"arch": e_arch, "mean": e_mean, "std": e_std},
              "best_hyperbolic": {"arch": h_arch, "mean": h_mean, "std": h_std},
              "margin": margin, "hyperbolic_advantage": bool(advantage),
              "config_hash": config_hash(cfg), "version": __version__}
    os.makedirs(os.path.join(out_dir, "reports"), exist_ok=True)
    path = os.path.join(out_dir, "reports", f"comparison_{config_hash(cfg)[:8]}.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    return report


# ---------------------------------------------------------------------------
# subcommands

def _cmd_generate(args) -> int:
    cfg = load_config(args.config, need_model=False)
    out = args.out
    os.makedirs(out, exist_ok=True)
    graph, X, y = build_dataset(cfg["dataset"])
    from .graphs import save_edge_list

    save_edge_list(os.path.join(out, "edges.txt"), graph)
    with open(os.path.join(out, "features.csv"), "w") as fh:
        for row in X:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    if y is not None:
        with open(os.path.join(out, "labels.csv"), "w") as fh:
            for v in y:
                fh.write(f"{int(v)}\n")
    for seed in _seed_list(args, cfg):
        data = build_task_data(cfg, graph, X, y, seed)
        with open(os.path.join(out, f"splits_s{seed}.json"), "w") as fh:
            fh.write(data.split.to_json())
    summary = {"n": graph.n, "edges": int(graph.edges.shape[0]),
               "feature_dim": int(X.shape[1]), "task": cfg["task"]["kind"],
               "config_hash": config_hash(cfg), "version": __version__}
    if args.delta:
        summary["gromov_delta"] = an.gromov_delta_exact(graph, cap=args.delta_cap).delta
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    print(f"dataset: n={graph.n} edges={graph.edges.shape[0]} -> {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    seeds = _seed_list(args, cfg)
    os.makedirs(args.out, exist_ok=True)
    records = _execute_runs(cfg, [{}], seeds, args.out, args.force, _jobs(args),
                            save_params=not args.no_params)
    path = _aggregate(records, args.out, cfg)
    ok = [r for r in records if "error" not in r]
    print(f"{len(ok)}/{len(records)} runs ok; aggregate -> {path}")
    return 0 if ok else 4


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    seeds = _seed_list(args, cfg)
    points = _sweep_points(cfg)
    os.makedirs(args.out, exist_ok=True)
    records = _execute_runs(cfg, points, seeds, args.out, args.force, _jobs(args),
                            save_params=args.save_params)
    path = _aggregate(records, args.out, cfg)
    report = _advantage_report(records, cfg, args.out)
    ok = [r for r in records if "error" not in r]
    print(f"{len(ok)}/{len(records)} runs ok over {len(points)} points; aggregate -> {path}")
    if report is not None:
        word = "yes" if report["hyperbolic_advantage"] else "no"
        print(f"hyperbolic advantage on {report['metric']}: {word} "
              f"({report['best_hyperbolic']['arch']} {report['best_hyperbolic']['mean']:.4f} "
              f"vs {report['best_euclidean']['arch']} {report['best_euclidean']['mean']:.4f})")
    return 0 if ok else 4


def _analyze_embeddings(cfg, args, graph, X):
    """Embeddings to analyze: a trained checkpoint when given, otherwise the
    raw features as a Euclidean embedding."""
    if args.checkpoint:
        arrays, meta = tk.load_checkpoint(args.checkpoint)
        model_cfg = _model_config(cfg, X.shape[1])
        model_arrays = {k[len("model."):]: v for k, v in arrays.items()
                        if k.startswith("model.")}
        out = tk.embed(model_cfg, model_arrays, graph, X)
        dec_w = arrays.get("dec.w")
        return out.Z.data, out.kind, out.spec().c, dec_w, meta.get("arch", model_cfg.arch)
    return X.astype(np.float64), "euclidean", 0.0, None, "features"


def _cmd_analyze(args) -> int:
    cfg = load_config(args.config, need_model=bool(args.checkpoint))
    graph, X, y = build_dataset(cfg["dataset"])
    Z, kind, c, dec_w, source = _analyze_embeddings(cfg, args, graph, X)
    report = {"source": source, "geometry": kind, "curvature": c, "n": graph.n,
              "config_hash": config_hash(cfg), "version": __version__}

    ii, jj = np.triu_indices(graph.n, k=1)
    if ii.shape[0] > args.max_pairs:
        sel = np.random.default_rng(0).choice(ii.shape[0], size=args.max_pairs,
                                              replace=False)
        sel.sort()
        ii, jj = ii[sel], jj[sel]
        report["pair_sample"] = int(args.max_pairs)
    D = graph.apsp()[ii, jj].astype(np.float64)

    try:
        dist = an.embedding_distortion((Z, kind, c), graph)
        report["distortion"] = {
            "contraction_factor": dist.contraction_factor,
            "expansion_factor": dist.expansion_factor,
            "total_distortion": dist.total_distortion,
            "best_fit_scale": dist.best_fit_scale,
        }
    except DataError as e:
        # duplicate rows make the contraction factor infinite; the stress
        # probes below are still well defined
        report["distortion"] = {"error": str(e)}
        dist = None
    fit = an.r2_binned_fit((Z, kind, c), graph)
    report["binned_fit"] = {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2}

    # stress of the best affine readout of embedding distances, normalized by
    # the same construction on raw feature distances: 1.0 means no better
    # than feature space
    demb = an.geodesic_pair_distances(Z, kind, c, ii, jj)
    var = float(np.var(demb))
    if var > 0:
        a = float(np.cov(demb, D, bias=True)[0, 1] / var)
        b = float(np.mean(D) - a * np.mean(demb))
    else:
        a, b = 0.0, float(np.mean(D))
    num = an.stress_value(a * demb + b, D)
    den = an.feature_baseline_stress(X, (ii, jj, D), (ii, jj, D))
    report["stress"] = num
    report["normalized_stress"] = num / den if den > 0 else float("inf")

    if dec_w is not None:
        Za, ka, ca = Z, kind, c
        w = np.asarray(dec_w).reshape(-1)
        if kind == LORENTZ:
            spec = ManifoldSpec(LORENTZ, Z.shape[1] - 1, c)
            Za = lorentz_to_poincare_rows(spec, Z)
            ka, ca = POINCARE, c
            w = w[1:]  # drop the time coordinate
        if np.linalg.norm(w) > 0 and dist is not None:
            al = an.alignment_quantities((Za, ka, ca), w, graph)
            bc = an.verify_lipschitz_bounds((Za, ka, ca), w, 0.0, graph)
            report["alignment"] = {
                "chord_geo_min": al.chord_geo_min, "chord_geo_max": al.chord_geo_max,
                "min_abs_cos": al.min_abs_cos, "max_scaled_norm": al.max_scaled_norm,
                "lower_constant": al.lower_constant, "upper_constant": al.upper_constant,
                "condition_number": al.condition_number,
                "lower_violations": bc.lower_violations,
                "upper_violations": bc.upper_violations,
            }
            if kind == LORENTZ:
                # the trained readout also sees the time coordinate; after the
                # ball map only its spatial part is representable
                report["alignment"]["readout"] = "spatial components only"

    if args.delta:
        g = an.gromov_delta_exact(graph, cap=args.delta_cap)
        report["gromov_delta"] = g.delta
        report["gromov_witness"] = list(g.witness)

    os.makedirs(os.path.join(args.out, "reports"), exist_ok=True)
    path = os.path.join(args.out, "reports", f"analysis_{config_hash(cfg)[:8]}.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    print(f"analysis ({source}): normalized stress {report['normalized_stress']:.4f}"
          + (f", delta {report['gromov_delta']}" if args.delta else "")
          + f" -> {path}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypalign",
                                description="Geometry-aware graph learning experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", required=True, help="output directory")

    g = sub.add_parser("generate", help="materialize a dataset to disk")
    common(g)
    g.add_argument("--seeds", type=int, help="write split manifests for seeds 0..N-1")
    g.add_argument("--seed-list", help="comma-separated explicit seeds")
    g.add_argument("--delta", action="store_true", help="include exact hyperbolicity")
    g.add_argument("--delta-cap", type=int, default=2000)
    g.set_defaults(fn=_cmd_generate)

    t = sub.add_parser("train", help="train one configuration over seeds")
    common(t)
    t.add_argument("--seeds", type=int)
    t.add_argument("--seed-list")
    t.add_argument("--force", action="store_true", help="re-run even if outputs exist")
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--no-params", action="store_true", help="skip checkpoint files")
    t.set_defaults(fn=_cmd_train)

    s = sub.add_parser("sweep", help="Cartesian sweep over config lists")
    common(s)
    s.add_argument("--seeds", type=int)
    s.add_argument("--seed-list")
    s.add_argument("--force", action="store_true")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--save-params", action="store_true")
    s.set_defaults(fn=_cmd_sweep)

    a = sub.add_parser("analyze", help="geometry diagnostics on a dataset or checkpoint")
    common(a)
    a.add_argument("--checkpoint", help="checkpoint prefix from a training run")
    a.add_argument("--delta", action="store_true")
    a.add_argument("--delta-cap", type=int, default=2000)
    a.add_argument("--max-pairs", type=int, default=2_000_000,
                   help="subsample pairs above this count for stress probes")
    a.set_defaults(fn=_cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except HypalignError as e:
        print(f"error: {e}", file=sys.stderr)
        for etype, code in _EXIT_CODES:
            if isinstance(e, etype):
                return code
        return 2


if __name__ == "__main__":
    sys.exit(main())
