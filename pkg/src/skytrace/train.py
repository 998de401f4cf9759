"""MSE training with Adam, MAE/RMSE metrics and the model comparison harness.

Randomness (see :mod:`skytrace.seeding`): the train/validation split uses
stream ``split``, epoch shuffles use ``shuffle`` and training-mode dropout
masks use ``dropout``, all keyed by ``TrainConfig.seed``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError, TrainingDivergedError
from .model import KIND_LABELS, Cg3dConfig, Cg3dModel, build_model, forward_batch, predict
from .preprocess import Dataset
from .tensor import Tape, Tensor, backward

REPORT_SCHEMA = "skytrace.compare/1"
SPLIT_MODES = ("sample", "trajectory")


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 512
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    validation_fraction: float = 0.2
    split: str = "sample"
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"train.learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError(f"train.validation_fraction must be in (0, 1), got {self.validation_fraction}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.epsilon > 0):
            raise ConfigError("train.beta1/beta2 must be in [0, 1) and epsilon positive")
        if self.split not in SPLIT_MODES:
            raise ConfigError(f"train.split must be one of {SPLIT_MODES}, got {self.split!r}")


# ---------------------------------------------------------------------------
# loss and metrics


def mse_loss(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor._wrap(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    d = T.sub(pred, target)
    return T.mean(T.mul(d, d))


@dataclass(frozen=True)
class Metrics:
    n: int
    mae: float
    rmse: float
    mse: float

    def __post_init__(self):
        if self.rmse < self.mae - 1e-12 * max(1.0, self.mae):
            raise ContractError(f"RMSE {self.rmse} < MAE {self.mae}")
        if abs(self.rmse**2 - self.mse) > 1e-12 * max(1.0, self.mse):
            raise ContractError(f"RMSE^2 {self.rmse**2} != MSE {self.mse}")


def compute_metrics(preds, targets) -> Metrics:
    """MAE and RMSE over every element; n is the element count."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"compute_metrics: predictions {p.shape} vs targets {t.shape}")
    if p.size == 0:
        raise ContractError("compute_metrics needs at least one element")
    d = (p - t).ravel()
    mae = float(np.abs(d).sum() / d.size)
    mse = float((d * d).sum() / d.size)
    return Metrics(n=int(d.size), mae=mae, rmse=math.sqrt(mse), mse=mse)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def init(cls, params: dict[str, Tensor]) -> "OptimizerState":
        return cls({n: np.zeros(p.shape) for n, p in params.items()}, {n: np.zeros(p.shape) for n, p in params.items()})


def optimizer_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimizerState, cfg: TrainConfig, context: str = ""):
    """Bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for {name}{' at ' + context if context else ''}")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return params, state


# ---------------------------------------------------------------------------
# training


def split_indices(dataset: Dataset, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/validation split by sample or by whole trajectory."""
    n = len(dataset)
    rng = seeding.rng(cfg.seed, "split")
    if cfg.split == "trajectory":
        trajs = np.unique(dataset.traj_index)
        n_val = int(round(cfg.validation_fraction * len(trajs)))
        n_val = min(max(n_val, 1), len(trajs) - 1) if len(trajs) > 1 else 0
        val_trajs = rng.permutation(trajs)[:n_val]
        is_val = np.isin(dataset.traj_index, val_trajs)
        val, tr = np.flatnonzero(is_val), np.flatnonzero(~is_val)
    else:
        perm = rng.permutation(n)
        n_val = int(round(cfg.validation_fraction * n))
        n_val = min(max(n_val, 1), n - 1) if n > 1 else 0
        val, tr = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    if len(tr) == 0 or len(val) == 0:
        raise ConfigError(f"split leaves {len(tr)} training and {len(val)} validation samples")
    return tr, val


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    val_mae: float


@dataclass
class TrainResult:
    model: Cg3dModel
    history: list[EpochRecord]
    train_idx: np.ndarray
    val_idx: np.ndarray
    val_metrics: Metrics | None = None


def write_history(history: list[EpochRecord], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mse", "val_mse", "val_mae"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_mse), repr(r.val_mse), repr(r.val_mae)])


def train(model: Cg3dModel, dataset: Dataset, cfg: TrainConfig, log=None) -> TrainResult:
    """Minibatch training; the returned model is the last epoch's (no early stopping)."""
    cfg.validate()
    if len(dataset) < 2:
        raise ConfigError(f"training needs at least 2 samples, got {len(dataset)}")
    tr, val = split_indices(dataset, cfg)
    X, Y = dataset.inputs, dataset.targets
    params = model.parameters()
    state = OptimizerState.init(params)
    shuffle_rng = seeding.rng(cfg.seed, "shuffle")
    dropout_rng = seeding.rng(cfg.seed, "dropout")
    history = []
    metrics = None
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(tr)
        total = 0.0
        for b, s in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[s : s + cfg.batch_size]
            for p in params.values():
                p.zero_grad()
            with Tape() as tape:
                loss = mse_loss(forward_batch(model, X[idx], "train", dropout_rng), Y[idx])
            backward(loss, tape)
            grads = {n: (p.grad if p.grad is not None else np.zeros(p.shape)) for n, p in params.items()}
            optimizer_step(params, grads, state, cfg, context=f"epoch {epoch}, batch {b}")
            total += loss.item() * len(idx)
        train_mse = total / len(order)
        if not math.isfinite(train_mse):
            raise TrainingDivergedError(f"training loss is {train_mse} at epoch {epoch}")
        metrics = compute_metrics(predict(model, X[val]), Y[val])
        history.append(EpochRecord(epoch, train_mse, metrics.mse, metrics.mae))
        if log is not None:
            log(f"epoch {epoch:4d}  train_mse {train_mse:.6f}  val_mse {metrics.mse:.6f}  val_mae {metrics.mae:.6f}")
    return TrainResult(model, history, tr, val, metrics)


def evaluate(model: Cg3dModel, dataset: Dataset, indices=None) -> Metrics:
    idx = np.arange(len(dataset)) if indices is None else np.asarray(indices)
    return compute_metrics(predict(model, dataset.inputs[idx]), dataset.targets[idx])


def persistence_metrics(dataset: Dataset, indices=None) -> Metrics:
    """Repeat the last observed point for every horizon step."""
    idx = np.arange(len(dataset)) if indices is None else np.asarray(indices)
    return compute_metrics(dataset.persistence_prediction(len(idx)), dataset.targets[idx])


# ---------------------------------------------------------------------------
# comparison harness


ROW_LABELS = ("CG3D", "3D CNN", "CNN-GRU", "CG3D+MC")


def compare_models(
    dataset: Dataset,
    model_cfg: Cg3dConfig,
    train_cfg: TrainConfig,
    mc_samples: int = 50,
    model_seed: int = 0,
    mc_seed: int = 0,
    log=None,
) -> dict:
    """Train CG3D and both single-branch baselines on one split, then score
    CG3D again with the Monte Carlo dropout mean. Returns a JSON-ready report.
    """
    from .mc import mc_predict_batch

    rows = []
    results = {}
    for kind in ("cg3d", "c3d_only", "cnn_gru_only"):
        if log is not None:
            log(f"training {KIND_LABELS[kind]}")
        model = build_model(model_cfg, dataset.d_spatial, dataset.d_temporal, model_seed, kind)
        res = train(model, dataset, train_cfg, log=log)
        results[kind] = res
        rows.append(_row(KIND_LABELS[kind], evaluate(res.model, dataset, res.val_idx)))

    cg3d = results["cg3d"]
    val = cg3d.val_idx
    mean, _ = mc_predict_batch(cg3d.model, dataset.inputs[val], mc_samples, mc_seed)
    mc_metrics = compute_metrics(mean, dataset.targets[val])
    rows.append(_row("CG3D+MC", mc_metrics))

    base = rows[0]
    d_mae = 100.0 * (mc_metrics.mae - base["mae"]) / base["mae"]
    d_rmse = 100.0 * (mc_metrics.rmse - base["rmse"]) / base["rmse"]
    return {
        "schema": REPORT_SCHEMA,
        "rows": rows,
        "mc_delta_percent": 0.5 * (d_mae + d_rmse),
        "mc_delta_percent_mae": d_mae,
        "mc_delta_percent_rmse": d_rmse,
        "mc": {
            "samples": mc_samples,
            "seed": mc_seed,
            "dropout_rate": model_cfg.dropout_rate,
            "trained_with_dropout": model_cfg.dropout_rate > 0,
        },
        "persistence": _row("persistence", persistence_metrics(dataset, val)),
        "split": {"train": int(len(cg3d.train_idx)), "validation": int(len(val)), "mode": train_cfg.split},
        "train": asdict(train_cfg),
        "model": model_cfg.to_dict(),
    }


def _row(label: str, m: Metrics) -> dict:
    return {"model": label, "mae": m.mae, "rmse": m.rmse, "mse": m.mse, "n": m.n}


def dump_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def format_report(report: dict) -> str:
    """Plain-text table of the report rows."""
    lines = [f"{'Model':<10} {'MAE':>10} {'RMSE':>10}"]
    for r in report["rows"]:
        lines.append(f"{r['model']:<10} {r['mae']:>10.4f} {r['rmse']:>10.4f}")
    lines.append(f"MC-dropout relative error change: {report['mc_delta_percent']:+.2f} %")
    p = report.get("persistence")
    if p:
        lines.append(f"(persistence baseline: MAE {p['mae']:.4f}, RMSE {p['rmse']:.4f})")
    return "\n".join(lines)
