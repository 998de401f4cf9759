"""``skytrace`` command line.

Every command is a pure function of its input files, config and ``--seed``.
Failures print one line ``error: <category>: <message>`` to stderr and exit
with the category's code (config 2, data/schema 3, format 4, diverged 5,
I/O 1).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adsb import group_into_trajectories, parse_csv, read_store, synth_generate, write_csv, write_rejects, write_store
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, SkytraceError
from .mc import mc_predict, mc_predict_batch
from .model import build_model, load_checkpoint, save_checkpoint
from .preprocess import build_dataset, load_dataset, save_dataset
from .train import (
    TrainConfig,
    compare_models,
    compute_metrics,
    dump_report,
    evaluate,
    format_report,
    persistence_metrics,
    split_indices,
    train,
    write_history,
)


def _say(msg: str) -> None:
    print(msg, flush=True)


def _count(n: int, noun: str) -> str:
    return f"{n} {noun}" if n == 1 else f"{n} {noun}s"


def _config(args) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "train.epochs": getattr(args, "epochs", None),
        "train.batch_size": getattr(args, "batch_size", None),
        "mc.samples": getattr(args, "mc_samples", None),
        "model.dropout_rate": getattr(args, "dropout", None),
        "synth.count": getattr(args, "count", None),
    }
    overrides.update(dict(_kv(s) for s in getattr(args, "set", None) or []))
    return load_config(args.config, overrides)


def _kv(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k, v


def _require_out(args) -> Path:
    if not args.out:
        raise ConfigError(f"{args.command} needs --out")
    return Path(args.out)


def _model_config_for(cfg: RunConfig, ds):
    m = cfg.model
    if (m.window, m.horizon) != (ds.window, ds.horizon):
        raise ConfigError(
            f"model window/horizon {m.window}/{m.horizon} do not match the dataset's {ds.window}/{ds.horizon}"
        )
    return m


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = _require_out(args)
    trajs = synth_generate(cfg.synth_config())
    records = [r for t in trajs for r in t.records]
    write_csv(records, out)
    _say(f"{_count(len(records), 'record')} in {_count(len(trajs), 'flight')} -> {out}")
    return 0


def cmd_ingest(args) -> int:
    cfg = _config(args)
    out = _require_out(args)
    if not Path(args.csv).read_text(encoding="utf-8").strip():
        raise DataError(f"{args.csv} is empty: no trajectories")
    parsed = parse_csv(args.csv)
    grouping = group_into_trajectories(parsed.records, cfg.ingest.gap_threshold)
    rejects = out.with_name(out.name + ".rejects.txt")
    write_rejects(parsed.rejected, rejects)
    _say(
        f"{_count(len(parsed.records), 'record')} ingested, {len(parsed.rejected)} rejected, "
        f"{len(grouping.trajectories)} trajectories, {grouping.discarded_count} isolated discarded"
    )
    if not grouping.trajectories:
        raise DataError("no trajectories")
    write_store(grouping.trajectories, out)
    return 0


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    out = _require_out(args)
    ds = build_dataset(read_store(args.store), cfg.preprocess)
    save_dataset(ds, out)
    r = ds.report
    _say(f"{_count(len(ds), 'sample')}")
    _say(
        f"trajectories: {r.trajectories_in} in, {r.used} used, {r.degenerate} degenerate, "
        f"{r.too_few_knots} too short; features: {ds.d_spatial} spatial + {ds.d_temporal} temporal"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _require_out(args)
    ds = load_dataset(args.dataset)
    tcfg = cfg.train_config()
    model = build_model(_model_config_for(cfg, ds), ds.d_spatial, ds.d_temporal, cfg.model_seed)
    res = train(model, ds, tcfg, log=None if args.quiet else _say)
    history = Path(args.history) if args.history else out.with_name(out.name + ".history.csv")
    write_history(res.history, history)
    save_checkpoint(res.model, out, extra={"train": _train_dict(tcfg)})
    m = res.val_metrics
    _say(f"validation MAE {m.mae:.6f} RMSE {m.rmse:.6f} (n={m.n}); history -> {history}")
    return 0


def _train_dict(t: TrainConfig) -> dict:
    return {k: getattr(t, k) for k in ("seed", "validation_fraction", "split", "epochs", "batch_size", "learning_rate")}


def _validation_indices(ds, extra: dict, use_all: bool) -> np.ndarray:
    if use_all or "train" not in extra:
        return np.arange(len(ds))
    t = extra["train"]
    tcfg = TrainConfig(seed=t["seed"], validation_fraction=t["validation_fraction"], split=t["split"])
    return split_indices(ds, tcfg)[1]


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    model, extra = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    idx = _validation_indices(ds, extra, args.all)
    m = evaluate(model, ds, idx)
    p = persistence_metrics(ds, idx)
    report = {
        "subset": "all" if args.all or "train" not in extra else "validation",
        "model": {"mae": m.mae, "rmse": m.rmse, "mse": m.mse, "n": m.n},
        "persistence": {"mae": p.mae, "rmse": p.rmse, "mse": p.mse, "n": p.n},
    }
    if args.mc_samples is not None:
        mean, _ = mc_predict_batch(model, ds.inputs[idx], cfg.mc.samples, cfg.seed)
        mc = compute_metrics(mean, ds.targets[idx])
        report["mc"] = {"samples": cfg.mc.samples, "mae": mc.mae, "rmse": mc.rmse, "mse": mc.mse, "n": mc.n}
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_compare(args) -> int:
    cfg = _config(args)
    out = _require_out(args)
    ds = load_dataset(args.dataset)
    report = compare_models(
        ds,
        _model_config_for(cfg, ds),
        cfg.train_config(),
        mc_samples=cfg.mc.samples,
        model_seed=cfg.model_seed,
        mc_seed=cfg.seed,
        log=None if args.quiet else _say,
    )
    out.write_text(dump_report(report), encoding="utf-8")
    _say(format_report(report))
    return 0


def cmd_mc_predict(args) -> int:
    cfg = _config(args)
    out = _require_out(args)
    model, _ = load_checkpoint(args.checkpoint)
    if args.dropout is not None:
        model.set_dropout(cfg.model.dropout_rate)
    ds = load_dataset(args.dataset)
    indices = args.index if args.index else list(range(len(ds)))
    rows = []
    for i in indices:
        if not 0 <= i < len(ds):
            raise ConfigError(f"sample index {i} outside 0..{len(ds) - 1}")
        p = mc_predict(model, ds.inputs[i], cfg.mc.samples, cfg.seed, key=(i,))
        physical = ds.physical_targets(p.mean[None], ds.anchors[i : i + 1])[0]
        rows.append({"index": i, "mean": p.mean.tolist(), "std": p.std.tolist(), "mean_physical": physical.tolist()})
    doc = {
        "samples": cfg.mc.samples,
        "seed": cfg.seed,
        "dropout_rate": model.config.dropout_rate,
        "columns": ["time", "lat", "lon", "altitude"],
        "predictions": rows,
    }
    out.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    _say(f"{len(rows)} predictions with T={cfg.mc.samples} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skytrace", description="4D flight trajectory prediction toolkit")
    parser.add_argument("--version", action="version", version=f"skytrace {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="root seed")
        p.add_argument("--out", help="output path")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.set_defaults(func=func)
        return p

    p = command("synth", cmd_synth, "generate synthetic ADS-B CSV")
    p.add_argument("--count", type=int, help="number of flights")

    p = command("ingest", cmd_ingest, "parse a CSV into a trajectory store")
    p.add_argument("csv")

    p = command("preprocess", cmd_preprocess, "build a windowed dataset from a trajectory store")
    p.add_argument("store")

    for name, func, text in (("train", cmd_train, "train CG3D"), ("compare", cmd_compare, "train and compare all models")):
        p = command(name, func, text)
        p.add_argument("dataset")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--quiet", action="store_true")
        if name == "train":
            p.add_argument("--history", help="history CSV path (default <out>.history.csv)")
        else:
            p.add_argument("--mc-samples", type=int)

    p = command("evaluate", cmd_evaluate, "score a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--all", action="store_true", help="score every sample, not only the validation split")
    p.add_argument("--mc-samples", type=int, help="also score the MC dropout mean")

    p = command("mc-predict", cmd_mc_predict, "MC dropout mean and std per sample")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--index", type=int, action="append", help="sample index (repeatable, default all)")
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--dropout", type=float, help="override the checkpoint's dropout rate")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SkytraceError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        where = f" {exc.filename}" if exc.filename else ""
        print(f"error: io:{where}: {exc.strerror or exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
