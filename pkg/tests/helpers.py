"""Shared fixtures-by-function for the test suite."""

import numpy as np

from skytrace.model import C3dStage, Cg3dConfig, ConvSpec, build_model
from skytrace.preprocess import Dataset, PcaModel, PreprocessConfig, TargetScaler


def tiny_config(dropout_rate=0.0, **kw) -> Cg3dConfig:
    """Every configured dimension is at most 4."""
    base = dict(
        cnn=(ConvSpec(2, (2, 2), "relu"),),
        cnn_width=2,
        gru_hidden=3,
        c3d=(C3dStage(2, (1, 1, 2), True, "relu"),),
        c3d_input_shape=(2, 2, 4),
        dropout_rate=dropout_rate,
        window=4,
        horizon=1,
        output_dim=4,
    )
    base.update(kw)
    return Cg3dConfig(**base)


def small_config(dropout_rate=0.2, **kw) -> Cg3dConfig:
    base = dict(
        cnn=(ConvSpec(4, (3, 3)),),
        cnn_width=5,
        gru_hidden=8,
        c3d=(C3dStage(4, (3, 3, 3)),),
        c3d_input_shape=(4, 5, 8),
        dropout_rate=dropout_rate,
        window=20,
        horizon=5,
    )
    base.update(kw)
    return Cg3dConfig(**base)


def tiny_model(seed=0, dropout_rate=0.0, kind="cg3d"):
    return build_model(tiny_config(dropout_rate), 2, 2, seed, kind)


def random_dataset(n, cfg: Cg3dConfig, d_spatial=2, d_temporal=2, seed=0, signal=True) -> Dataset:
    """A synthetic windowed dataset whose targets depend on the last input step."""
    rng = np.random.default_rng(seed)
    d = d_spatial + d_temporal
    inputs = rng.normal(size=(n, cfg.window, d))
    targets = np.zeros((n, cfg.horizon, 4))
    if signal:
        last = np.zeros((n, 4))
        last[:, : min(d, 4)] = inputs[:, -1, :4]
        for h in range(cfg.horizon):
            targets[:, h, :] = np.tanh(last) * (h + 1) / cfg.horizon
    targets += 0.01 * rng.normal(size=targets.shape)
    eye = lambda k: PcaModel(np.zeros(k), np.ones(k), np.eye(k), np.ones(k))  # noqa: E731
    return Dataset(
        inputs=inputs,
        targets=targets,
        anchors=np.zeros((n, 4)),
        traj_index=np.arange(n) // 3,
        starts=np.zeros(n, dtype=np.int64),
        trajectory_ids=[f"t{i}" for i in range((n + 2) // 3)],
        d_spatial=d_spatial,
        d_temporal=d_temporal,
        spatial_pca=eye(d_spatial),
        temporal_pca=eye(d_temporal),
        target_scaler=TargetScaler(np.zeros(4), np.ones(4)),
        config=PreprocessConfig(window=cfg.window, horizon=cfg.horizon),
    )


SMALL_RUN_CONFIG = """\
synth.count=12
synth.duration=900
preprocess.window=20
model.window=20
model.cnn=4:3x3:relu
model.gru_hidden=8
model.c3d=4:3x3x3:pool:relu
model.c3d_input_shape=4x5x8
train.epochs=2
train.batch_size=32
mc.samples=4
"""
