"""Command-line entry point: ``kanrec {train,eval,continual,explain,trace}``.

Settings resolve in order: built-in defaults, ``--config`` JSON file (flat
dotted keys such as ``"train.lr"``), ``KANREC_*`` environment variables
(``KANREC_TRAIN_LR``), then command-line flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as dataio
from .interpret import NotKanModel, compute_importance, explain_item, export_graph, prune, target_subgraph, to_dot
from .metrics import evaluate_model
from .model import ModelConfig, build_model
from .training import DeltaTracker, TrainConfig, TrainingDiverged, continual_train, train, write_history

log = logging.getLogger("kanrec")


class ConfigError(ValueError):
    pass


def _int_list(s):
    if isinstance(s, (list, tuple)):
        return [int(x) for x in s]
    return [int(x) for x in str(s).split(",") if x.strip()]


def _float_list(s):
    if isinstance(s, (list, tuple)):
        return [float(x) for x in s]
    return [float(x) for x in str(s).split(",") if x.strip()]


def _opt_float(s):
    return None if s is None or str(s).lower() in ("", "none") else float(s)


def _opt_int(s):
    return None if s is None or str(s).lower() in ("", "none") else int(s)


def _opt_str(s):
    return None if s is None or str(s) == "" else str(s)


def _bool(s):
    if isinstance(s, bool):
        return s
    return str(s).lower() in ("1", "true", "yes", "on")


@dataclass(frozen=True)
class Option:
    key: str
    flag: str
    type: object
    default: object
    help: str
    commands: tuple = ("train", "eval", "continual", "explain", "trace")


DATA = ("train", "eval", "continual", "explain", "trace")
FIT = ("train", "continual", "trace")

OPTIONS = [
    Option("data.path", "--data", _opt_str, None, "interaction file (user, item[, rating][, timestamp])", DATA),
    Option("data.format", "--format", str, "csv", "csv or tsv", DATA),
    Option("data.delimiter", "--delimiter", _opt_str, None, "field separator, e.g. '::' for MovieLens", DATA),
    Option("data.columns", "--columns", _opt_str, None, "user,item,rating,timestamp positions or header names", DATA),
    Option("data.min_rating", "--min-rating", _opt_float, None, "drop rows rated below this", DATA),
    Option("data.core", "--core", int, 0, "iterative k-core filter on users and items (0 = off)", DATA),
    Option("model.kind", "--kind", str, "kan", "kan or mlp", FIT),
    Option("model.layers", "--layers", int, 1, "encoder (= decoder) depth L", FIT),
    Option("model.grids", "--grids", int, 2, "spline grid count G", FIT),
    Option("model.order", "--order", int, 3, "spline order k", FIT),
    Option("model.latent", "--latent", int, 512, "latent width h", FIT),
    Option("model.activation", "--activation", str, "silu", "base activation: silu, elu, tanh, relu", FIT),
    Option("model.loss", "--loss", str, "mse", "mse or bce", FIT),
    Option("model.lam", "--lam", float, 0.0, "regularization coefficient", FIT),
    Option("train.batch_size", "--batch-size", int, 256, "mini-batch size", FIT),
    Option("train.lr", "--lr", float, 1e-3, "Adam learning rate", FIT),
    Option("train.beta1", "--beta1", float, 0.9, "Adam beta1", FIT),
    Option("train.beta2", "--beta2", float, 0.999, "Adam beta2", FIT),
    Option("train.eps", "--eps", float, 1e-8, "Adam epsilon", FIT),
    Option("train.epochs", "--epochs", int, 100, "maximum epochs", FIT),
    Option("train.patience", "--patience", int, 10, "early-stop patience on validation R@20 (0 = off)", FIT),
    Option("train.clip_norm", "--clip-norm", _opt_float, None, "global gradient-norm clip", FIT),
    Option("train.finetune_epochs", "--finetune-epochs", _opt_int, None, "epochs per incremental block", FIT),
    Option("split.ratios", "--ratios", _float_list, [0.8, 0.1, 0.1], "train,val,test ratios", DATA),
    Option("eval.k", "--k-eval", _int_list, [10, 20], "cutoffs for Recall/NDCG", ("train", "eval")),
    Option("continual.base_fraction", "--base-fraction", float, 0.5, "share of interactions in the base block", ("continual",)),
    Option("continual.blocks", "--blocks", int, 5, "number of incremental blocks", ("continual",)),
    Option("continual.k", "--k", int, 20, "cutoff for the block-performance matrix", ("continual",)),
    Option("trace.every", "--every", int, 1, "optimizer steps between delta snapshots", ("continual", "trace")),
    Option("trace.rows", "--rows", int, 10, "tracked output units", ("continual", "trace")),
    Option("trace.cols", "--cols", int, 10, "tracked input items", ("continual", "trace")),
    Option("trace.coef_index", "--coef-index", int, 0, "tracked spline coefficient (KAN)", ("continual", "trace")),
    Option("explain.checkpoint", "--checkpoint", _opt_str, None, "model checkpoint", ("eval", "explain")),
    Option("explain.item", "--item", _opt_str, None, "target item id", ("explain",)),
    Option("explain.user", "--user", _opt_str, None, "explain for this user's history", ("explain",)),
    Option("explain.tau1", "--tau1", float, 0.1, "node-pruning threshold", ("explain",)),
    Option("explain.tau2", "--tau2", float, 0.09, "edge-pruning threshold", ("explain",)),
    Option("explain.max_paths", "--max-paths", int, 10, "items to list", ("explain",)),
    Option("explain.sample", "--sample", _opt_int, None, "reference users sampled from train (default: all)", ("explain",)),
    Option("seed", "--seed", int, 0, "master seed for init, shuffling and splits"),
    Option("threads", "--threads", _opt_int, None, "cap on BLAS threads"),
    Option("out", "--out", str, "runs", "output directory"),
]
BY_KEY = {o.key: o for o in OPTIONS}


def env_name(key):
    return "KANREC_" + key.upper().replace(".", "_")


def resolve_config(command, args, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    cfg = {o.key: o.default for o in OPTIONS if command in o.commands}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for k, v in doc.items():
            if k not in BY_KEY:
                raise ConfigError(f"unknown config key {k!r}")
            if k in cfg:
                cfg[k] = v
    for k in cfg:
        if env_name(k) in environ:
            cfg[k] = environ[env_name(k)]
    for k in cfg:
        v = getattr(args, BY_KEY[k].flag.lstrip("-").replace("-", "_"), None)
        if v is not None:
            cfg[k] = v
    for k, v in cfg.items():
        try:
            cfg[k] = BY_KEY[k].type(v) if v is not None else None
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {k}: {v!r}") from None
    return cfg


def model_config(cfg, n_items) -> ModelConfig:
    mc = ModelConfig(
        n_items=n_items,
        latent=cfg["model.latent"],
        layers=cfg["model.layers"],
        kind=cfg["model.kind"],
        grids=cfg["model.grids"],
        order=cfg["model.order"],
        activation=cfg["model.activation"],
        loss=cfg["model.loss"],
        lam=cfg["model.lam"],
        seed=cfg["seed"],
    )
    try:
        mc.validate()
        from .kan_layer import activation

        activation(mc.activation)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return mc


def train_config(cfg) -> TrainConfig:
    try:
        return TrainConfig(
            batch_size=cfg["train.batch_size"],
            learning_rate=cfg["train.lr"],
            adam_beta1=cfg["train.beta1"],
            adam_beta2=cfg["train.beta2"],
            adam_eps=cfg["train.eps"],
            max_epochs=cfg["train.epochs"],
            patience=cfg["train.patience"],
            seed=cfg["seed"],
            clip_norm=cfg["train.clip_norm"],
            finetune_epochs=cfg["train.finetune_epochs"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_dataset(cfg):
    path = cfg["data.path"]
    if not path:
        raise ConfigError("--data is required")
    columns = None
    if cfg["data.columns"]:
        names = ("user", "item", "rating", "timestamp")
        parts = [p.strip() for p in cfg["data.columns"].split(",")]
        columns = {n: (int(p) if p.isdigit() else (None if p in ("", "-") else p)) for n, p in zip(names, parts)}
        for n in names[len(parts) :]:
            columns[n] = None
    return dataio.load_interactions(
        path,
        fmt=cfg["data.format"],
        delimiter=cfg["data.delimiter"],
        columns=columns,
        min_rating=cfg["data.min_rating"],
        core=cfg["data.core"],
    )


def _outdir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _test_report(model, split, ks):
    train_m = split.train_matrix()
    mask = (train_m + split.val_matrix()) > 0
    return evaluate_model(model, train_m, mask, split.test_matrix(), Ks=ks)


def cmd_train(cfg):
    out = _outdir(cfg)
    ds = load_dataset(cfg)
    split = dataio.split_static(ds, cfg["split.ratios"], seed=cfg["seed"])
    model = build_model(model_config(cfg, ds.n_items))
    tc = train_config(cfg)
    ckpt = out / "model.ckpt"
    extra = {"run": cfg, "dataset": ds.summary()}
    result = train(model, split, tc, on_best=lambda epoch, m: dataio.save_checkpoint(m, ckpt, extra))
    dataio.save_checkpoint(model, ckpt, extra)
    report = _test_report(model, split, cfg["eval.k"])
    write_history(result.history, out / "history.csv")
    dataio.save_manifest(split, out / "split.json")
    _dump(
        out / "eval.json",
        {"test": report.to_dict(), "best_epoch": result.best_epoch, "n_params": model.n_params, "dataset": ds.summary()},
    )
    print(f"{model.kind.upper()} model, {model.n_params} parameters, best epoch {result.best_epoch}")
    print(report.table())
    return 0


def cmd_eval(cfg):
    out = _outdir(cfg)
    if not cfg["explain.checkpoint"]:
        raise ConfigError("--checkpoint is required")
    model, extra = dataio.load_checkpoint(cfg["explain.checkpoint"])
    ds = load_dataset(cfg)
    if ds.n_items != model.n_items:
        raise dataio.DataError(f"dataset has {ds.n_items} items, checkpoint expects {model.n_items}")
    seed = extra.get("run", {}).get("seed", cfg["seed"])
    ratios = extra.get("run", {}).get("split.ratios", cfg["split.ratios"])
    split = dataio.split_static(ds, ratios, seed=seed)
    report = _test_report(model, split, cfg["eval.k"])
    _dump(out / "eval.json", {"test": report.to_dict()})
    print(report.table())
    return 0


def cmd_continual(cfg):
    out = _outdir(cfg)
    ds = load_dataset(cfg)
    if ds.timestamps is None:
        raise dataio.DataError("dataset has no timestamps")
    blocks = dataio.split_continual(ds, cfg["continual.base_fraction"], cfg["continual.blocks"], cfg["split.ratios"], cfg["seed"])
    model = build_model(model_config(cfg, ds.n_items))
    tc = train_config(cfg)
    tracker = DeltaTracker(
        model, every=cfg["trace.every"], rows=cfg["trace.rows"], cols=cfg["trace.cols"], coef_index=cfg["trace.coef_index"]
    )
    result = continual_train(model, blocks, tc, K=cfg["continual.k"], tracker=tracker)
    rep = result.report
    result.trace.export_csv(out / "traces")
    dataio.save_manifest(blocks, out / "blocks.json")
    _dump(
        out / "continual.json",
        {
            "kind": model.kind,
            "k": cfg["continual.k"],
            **rep.to_dict(),
            "locality": result.trace.locality(),
            "n_params": model.n_params,
            "block_sizes": [len(v.rows) for v in blocks.all],
        },
    )
    print(f"{model.kind.upper()} continual run, R@{cfg['continual.k']}")
    print(rep.table())
    return 0


def cmd_trace(cfg):
    out = _outdir(cfg)
    ds = load_dataset(cfg)
    split = dataio.split_static(ds, cfg["split.ratios"], seed=cfg["seed"])
    model = build_model(model_config(cfg, ds.n_items))
    tracker = DeltaTracker(
        model, every=cfg["trace.every"], rows=cfg["trace.rows"], cols=cfg["trace.cols"], coef_index=cfg["trace.coef_index"]
    )
    train(model, split, train_config(cfg), on_step=tracker)
    paths = tracker.trace.export_csv(out / "traces")
    stat = tracker.trace.locality()
    _dump(out / "trace.json", {"param": tracker.param_name, "snapshots": len(paths), "locality": stat})
    print(f"{len(paths)} snapshots of {tracker.param_name} written to {out / 'traces'}")
    print(f"locality (share of entries above 10% of the step max): {stat:.4f}")
    return 0


def cmd_explain(cfg):
    out = _outdir(cfg)
    if not cfg["explain.checkpoint"]:
        raise ConfigError("--checkpoint is required")
    if cfg["explain.item"] is None:
        raise ConfigError("--item is required")
    model, extra = dataio.load_checkpoint(cfg["explain.checkpoint"], expected_kind="kan")
    ds = load_dataset(cfg)
    if ds.n_items != model.n_items:
        raise dataio.DataError(f"dataset has {ds.n_items} items, checkpoint expects {model.n_items}")
    index = ds.item_index
    if cfg["explain.item"] not in index:
        raise LookupError(f"unknown item id {cfg['explain.item']!r}")
    target = index[cfg["explain.item"]]
    seed = extra.get("run", {}).get("seed", cfg["seed"])
    train_m = dataio.split_static(ds, cfg["split.ratios"], seed=seed).train_matrix()
    restrict = None
    if cfg["explain.user"] is not None:
        users = ds.user_index
        if cfg["explain.user"] not in users:
            raise LookupError(f"unknown user id {cfg['explain.user']!r}")
        row = train_m[users[cfg["explain.user"]]]
        reference = row.toarray()
        restrict = row.indices
    else:
        rows = np.flatnonzero(np.diff(train_m.indptr) > 0)
        if cfg["explain.sample"] and cfg["explain.sample"] < len(rows):
            rows = np.sort(np.random.default_rng(seed).choice(rows, cfg["explain.sample"], replace=False))
        reference = train_m[rows].toarray()
    graph = prune(compute_importance(model, reference, list(ds.item_ids)), cfg["explain.tau1"], cfg["explain.tau2"])
    export_graph(graph, out / "graph.json", "json")
    sub = target_subgraph(graph, target)
    (out / "explain.dot").write_text(to_dot(sub, hide_isolated=True))
    # a recommended item is never in the history it is explained by
    candidates = np.arange(ds.n_items) if restrict is None else restrict
    candidates = candidates[candidates != target]
    ranked = explain_item(graph, target, cfg["explain.max_paths"], inputs=candidates)
    lines = [f"explanation for item {cfg['explain.item']} (tau1={cfg['explain.tau1']}, tau2={cfg['explain.tau2']})"]
    if not ranked:
        lines.append("no surviving paths")
    for rank, (_, label, strength) in enumerate(ranked, 1):
        lines.append(f"{rank:>3}  {label!s:<20} {strength:.6g}")
    text = "\n".join(lines)
    (out / "explanation.txt").write_text(text + "\n")
    print(text)
    return 0


COMMANDS = {
    "train": (cmd_train, "split, train and evaluate a model"),
    "eval": (cmd_eval, "evaluate a checkpoint on the test split"),
    "continual": (cmd_continual, "block-wise continual training with LA/RA/H-mean"),
    "explain": (cmd_explain, "prune a KAN checkpoint and explain one item"),
    "trace": (cmd_trace, "train while exporting parameter-delta snapshots"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="kanrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON file of dotted keys (default: none)")
        for o in OPTIONS:
            if name in o.commands:
                default = ",".join(map(str, o.default)) if isinstance(o.default, list) else o.default
                p.add_argument(o.flag, default=None, help=f"{o.help} [{o.key}, default: {default}]")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    func = COMMANDS[args.command][0]
    try:
        cfg = resolve_config(args.command, args)
        if cfg.get("threads"):
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=cfg["threads"]):
                return func(cfg)
        return func(cfg)
    except ConfigError as exc:
        print(f"config: {exc}", file=sys.stderr)
    except FileNotFoundError as exc:
        print(f"data: file not found: {exc.filename or exc}", file=sys.stderr)
    except dataio.DataError as exc:
        print(f"data: {exc}", file=sys.stderr)
    except TrainingDiverged as exc:
        print(f"divergence: {exc}", file=sys.stderr)
    except (dataio.CheckpointError, NotKanModel) as exc:
        print(f"checkpoint: {exc}", file=sys.stderr)
    except LookupError as exc:
        print(f"explain: {exc.args[0] if exc.args else exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
