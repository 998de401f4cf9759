import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from helpers import random_dataset, small_config, tiny_config, tiny_model
from skytrace.errors import ConfigError, ContractError, ShapeError, TrainingDivergedError
from skytrace.model import build_model, forward_batch
from skytrace.tensor import Tape, Tensor, backward
from skytrace.train import (
    Metrics,
    OptimizerState,
    ROW_LABELS,
    TrainConfig,
    compare_models,
    compute_metrics,
    dump_report,
    mse_loss,
    optimizer_step,
    split_indices,
    train,
    write_history,
)


# --- loss and metrics ---------------------------------------------------------


def test_mse_loss_examples():
    a = np.random.default_rng(0).normal(size=(2, 5, 4))
    assert mse_loss(Tensor(a), a).item() == 0.0
    assert mse_loss(Tensor(a + 1.0), a).item() == pytest.approx(1.0, abs=1e-15)
    assert mse_loss(Tensor(np.array([1.0, 2.0])), np.zeros(2)).item() == 2.5
    with pytest.raises(ShapeError):
        mse_loss(Tensor(np.zeros((2, 5, 4))), np.zeros((2, 4, 4)))


def test_metrics_hand_values():
    m = compute_metrics([1.0, 2.0], [0.0, 0.0])
    assert m.mae == 1.5
    assert m.rmse == math.sqrt(2.5)
    assert m.n == 2
    z = compute_metrics(np.ones((3, 5, 4)), np.ones((3, 5, 4)))
    assert z.mae == 0.0 and z.rmse == 0.0


def test_metrics_errors():
    with pytest.raises(ContractError):
        compute_metrics(np.zeros(0), np.zeros(0))
    with pytest.raises(ShapeError):
        compute_metrics(np.zeros(3), np.zeros(4))
    with pytest.raises(ContractError, match="RMSE"):
        Metrics(n=2, mae=2.0, rmse=1.0, mse=1.0)


@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e3, 1e3)), st.integers(0, 10_000))
@settings(max_examples=100)
def test_rmse_never_below_mae(preds, seed):
    targets = np.random.default_rng(seed).normal(size=preds.shape)
    m = compute_metrics(preds, targets)
    assert m.rmse >= m.mae
    assert abs(m.rmse**2 - m.mse) <= 1e-12 * max(1.0, m.mse)


# --- optimizer ---------------------------------------------------------------


def test_adam_zero_gradient_leaves_parameters():
    p = {"w": Tensor(np.array([1.0, -2.0]))}
    state = OptimizerState.init(p)
    optimizer_step(p, {"w": np.zeros(2)}, state, TrainConfig())
    assert np.array_equal(p["w"].data, [1.0, -2.0]) and state.step == 1


def test_adam_first_step_magnitude_is_learning_rate():
    p = {"w": Tensor(np.array([0.5]))}
    cfg = TrainConfig(learning_rate=1e-3)
    optimizer_step(p, {"w": np.array([1.0])}, OptimizerState.init(p), cfg)
    assert abs((0.5 - p["w"].data[0]) - 1e-3) <= 1e-3 * 1e-7


def test_adam_is_deterministic():
    def run():
        rng = np.random.default_rng(0)
        p = {"w": Tensor(rng.normal(size=(3, 3)))}
        s = OptimizerState.init(p)
        for _ in range(5):
            optimizer_step(p, {"w": rng.normal(size=(3, 3))}, s, TrainConfig())
        return p["w"].data

    assert run().tobytes() == run().tobytes()


def test_nan_gradient_raises_with_context():
    p = {"w": Tensor(np.zeros(2))}
    with pytest.raises(TrainingDivergedError, match="epoch 3, batch 7"):
        optimizer_step(p, {"w": np.array([np.nan, 0.0])}, OptimizerState.init(p), TrainConfig(), "epoch 3, batch 7")


def test_small_step_does_not_increase_batch_loss():
    m = tiny_model(1)
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(4, 4, 4)), rng.normal(size=(4, 1, 4))
    params = m.parameters()
    with Tape() as tape:
        loss = mse_loss(forward_batch(m, x), y)
    backward(loss, tape)
    optimizer_step(params, {n: p.grad for n, p in params.items()}, OptimizerState.init(params), TrainConfig(learning_rate=1e-5))
    after = mse_loss(forward_batch(m, x), y).item()
    assert after <= loss.item() + 1e-12


# --- training loop ---------------------------------------------------------


def test_train_config_validation():
    for bad in (dict(epochs=0), dict(batch_size=0), dict(validation_fraction=0.0), dict(validation_fraction=1.0), dict(split="x")):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()


def test_split_is_disjoint_and_covering():
    ds = random_dataset(50, tiny_config())
    tr, val = split_indices(ds, TrainConfig(seed=3))
    assert not set(tr) & set(val)
    assert sorted(set(tr) | set(val)) == list(range(50))
    assert len(val) == 10
    tr2, val2 = split_indices(ds, TrainConfig(seed=3))
    assert np.array_equal(tr, tr2) and np.array_equal(val, val2)


def test_trajectory_split_keeps_trajectories_whole():
    ds = random_dataset(60, tiny_config())
    tr, val = split_indices(ds, TrainConfig(split="trajectory", seed=1))
    assert not set(ds.traj_index[tr]) & set(ds.traj_index[val])


def test_train_rejects_too_few_samples():
    with pytest.raises(ConfigError):
        train(tiny_model(), random_dataset(1, tiny_config()), TrainConfig(epochs=1))


def test_zero_learning_rate_keeps_everything_constant():
    cfg = tiny_config()
    m = build_model(cfg, 2, 2, 0)
    before = {n: t.data.copy() for n, t in m.parameters().items()}
    res = train(m, random_dataset(20, cfg), TrainConfig(epochs=4, batch_size=64, learning_rate=0.0))
    for n, t in res.model.parameters().items():
        assert np.array_equal(t.data, before[n])
    losses = [h.train_mse for h in res.history]
    assert np.allclose(losses, losses[0], rtol=1e-12)
    assert len({h.val_mse for h in res.history}) == 1


def test_overfit_tiny_model():
    cfg = tiny_config()
    res = train(build_model(cfg, 2, 2, 0), random_dataset(2, cfg), TrainConfig(epochs=50, batch_size=1, learning_rate=1e-2))
    assert len(res.history) == 50
    assert res.history[-1].train_mse < res.history[0].train_mse


def test_training_is_reproducible_and_history_file(tmp_path):
    cfg = small_config()
    ds = random_dataset(40, cfg, 3, 4)
    tcfg = TrainConfig(epochs=3, batch_size=8, seed=5)
    a = train(build_model(cfg, 3, 4, 1), ds, tcfg)
    b = train(build_model(cfg, 3, 4, 1), ds, tcfg)
    write_history(a.history, tmp_path / "a.csv")
    write_history(b.history, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_mse,val_mse,val_mae" and len(lines) == 4


def test_training_reduces_loss_on_learnable_data():
    cfg = small_config(dropout_rate=0.0)
    ds = random_dataset(80, cfg, 3, 4)
    res = train(build_model(cfg, 3, 4, 0), ds, TrainConfig(epochs=15, batch_size=16, learning_rate=3e-3))
    assert res.history[-1].train_mse < 0.5 * res.history[0].train_mse


# --- comparison harness ------------------------------------------------------


def test_compare_report_structure_and_determinism():
    cfg = small_config()
    ds = random_dataset(30, cfg, 3, 4)
    tcfg = TrainConfig(epochs=2, batch_size=8)
    a = compare_models(ds, cfg, tcfg, mc_samples=3)
    b = compare_models(ds, cfg, tcfg, mc_samples=3)
    assert dump_report(a) == dump_report(b)
    assert [r["model"] for r in a["rows"]] == list(ROW_LABELS) == ["CG3D", "3D CNN", "CNN-GRU", "CG3D+MC"]
    for r in a["rows"]:
        assert math.isfinite(r["mae"]) and math.isfinite(r["rmse"])
        assert 0 <= r["mae"] <= r["rmse"]
    assert math.isfinite(a["mc_delta_percent"])
    assert a["mc"]["trained_with_dropout"] is True
    assert a["schema"] == "skytrace.compare/1"


def test_compare_without_dropout_has_zero_mc_delta():
    cfg = small_config(dropout_rate=0.0)
    rep = compare_models(random_dataset(20, cfg, 3, 4), cfg, TrainConfig(epochs=1, batch_size=8), mc_samples=4)
    assert rep["mc_delta_percent"] == 0.0
    assert rep["rows"][0]["mae"] == rep["rows"][3]["mae"]
    assert rep["mc"]["trained_with_dropout"] is False
