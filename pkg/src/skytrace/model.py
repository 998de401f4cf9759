"""The CG3D hybrid network and its two single-branch baselines.

Input windows are ``[B, W, d_spatial + d_temporal]`` arrays whose first
``d_spatial`` columns are the spatial PCA coordinates. Two branches run in
parallel:

* CNN-GRU: the spatial columns form a one-channel ``W x cnn_width`` image
  (zero-padded on the feature axis) that goes through the 2D conv stack;
  the temporal columns go through the GRU, whose final hidden state is
  kept. Both are flattened and concatenated.
* C3D: the whole window is cut into ``D`` frames of ``Hc`` consecutive
  steps, zero-padded to ``Wc`` features, and sent through alternating
  3x3x3 convolutions and 2x2x2 max pools.

Each branch's feature vector passes a dropout, the two are concatenated,
dropped out again and mapped by a linear dense layer to ``horizon * 4``
values reshaped to ``[horizon, 4]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import container
from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import Conv2dLayer, Conv3dLayer, DenseLayer, DropoutSpec, GruCell, dropout_forward, gru_sequence
from .tensor import Tensor, no_grad

MODEL_KINDS = ("cg3d", "c3d_only", "cnn_gru_only")
KIND_LABELS = {"cg3d": "CG3D", "c3d_only": "3D CNN", "cnn_gru_only": "CNN-GRU"}
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    activation: str = "relu"


@dataclass(frozen=True)
class C3dStage:
    out_channels: int
    kernel: tuple[int, int, int] = (3, 3, 3)
    pool: bool = True
    activation: str = "relu"


@dataclass(frozen=True)
class Cg3dConfig:
    cnn: tuple[ConvSpec, ...] = (ConvSpec(8), ConvSpec(8))
    cnn_width: int = 5
    gru_hidden: int = 64
    c3d: tuple[C3dStage, ...] = (C3dStage(8), C3dStage(16))
    c3d_input_shape: tuple[int, int, int] = (10, 10, 10)
    dropout_rate: float = 0.2
    window: int = 100
    horizon: int = 5
    output_dim: int = 4

    def validate(self) -> None:
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"model.dropout_rate must be in [0, 1), got {self.dropout_rate}")
        for name in ("cnn_width", "gru_hidden", "window", "horizon", "output_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1, got {getattr(self, name)}")
        if len(self.c3d_input_shape) != 3 or min(self.c3d_input_shape) < 1:
            raise ConfigError(f"model.c3d_input_shape must be three positive ints, got {self.c3d_input_shape}")
        d, hc, _ = self.c3d_input_shape
        if d * hc != self.window:
            raise ConfigError(f"c3d frames {d} x {hc} steps do not tile the {self.window}-step window")
        for spec in self.cnn:
            if spec.out_channels < 1 or len(spec.kernel) != 2 or min(spec.kernel) < 1:
                raise ConfigError(f"bad cnn layer {spec}")
        for stage in self.c3d:
            if stage.out_channels < 1 or len(stage.kernel) != 3 or min(stage.kernel) < 1:
                raise ConfigError(f"bad c3d stage {stage}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Cg3dConfig":
        d = dict(d)
        d["cnn"] = tuple(ConvSpec(s["out_channels"], tuple(s["kernel"]), s["activation"]) for s in d["cnn"])
        d["c3d"] = tuple(
            C3dStage(s["out_channels"], tuple(s["kernel"]), bool(s["pool"]), s["activation"]) for s in d["c3d"]
        )
        d["c3d_input_shape"] = tuple(d["c3d_input_shape"])
        return cls(**d)


def cnn_shape_walk(cfg: Cg3dConfig) -> list[tuple[int, int, int]]:
    """(channels, height, width) after the input and after every conv layer."""
    shapes = [(1, cfg.window, cfg.cnn_width)]
    for i, spec in enumerate(cfg.cnn):
        _, h, w = shapes[-1]
        p, q = spec.kernel
        if p > h or q > w:
            raise ConfigError(f"cnn stage {i}: kernel {spec.kernel} larger than input {(h, w)}")
        shapes.append((spec.out_channels, h - p + 1, w - q + 1))
    return shapes


def c3d_shape_walk(cfg: Cg3dConfig) -> list[tuple[int, int, int, int]]:
    """(channels, D, H, W) after the input and after every conv and pool."""
    shapes = [(1,) + tuple(cfg.c3d_input_shape)]
    for i, stage in enumerate(cfg.c3d):
        _, *dims = shapes[-1]
        if any(k > s for k, s in zip(stage.kernel, dims)):
            raise ConfigError(f"c3d stage {i}: kernel {stage.kernel} larger than input {tuple(dims)}")
        dims = [s - k + 1 for s, k in zip(dims, stage.kernel)]
        shapes.append((stage.out_channels, *dims))
        if stage.pool:
            if min(dims) < 2:
                raise ConfigError(f"c3d stage {i}: cannot 2x2x2-pool a {tuple(dims)} volume")
            shapes.append((stage.out_channels, *(s // 2 for s in dims)))
    return shapes


@dataclass
class Cg3dModel:
    config: Cg3dConfig
    kind: str
    d_spatial: int
    d_temporal: int
    conv2d: list[Conv2dLayer] = field(default_factory=list)
    gru: GruCell | None = None
    conv3d: list[Conv3dLayer] = field(default_factory=list)
    dropouts: dict[str, DropoutSpec] = field(default_factory=dict)
    head: DenseLayer | None = None

    @property
    def uses_cnn_gru(self) -> bool:
        return self.kind in ("cg3d", "cnn_gru_only")

    @property
    def uses_c3d(self) -> bool:
        return self.kind in ("cg3d", "c3d_only")

    @property
    def d_in(self) -> int:
        return self.d_spatial + self.d_temporal

    def feature_sizes(self) -> dict[str, int]:
        sizes = {}
        if self.uses_cnn_gru:
            c, h, w = cnn_shape_walk(self.config)[-1]
            sizes["cnn_gru"] = c * h * w + self.config.gru_hidden
        if self.uses_c3d:
            sizes["c3d"] = int(np.prod(c3d_shape_walk(self.config)[-1]))
        return sizes

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for i, layer in enumerate(self.conv2d):
            for n, t in layer.parameters().items():
                params[f"cnn.{i}.{n}"] = t
        if self.gru is not None:
            for n, t in self.gru.parameters().items():
                params[f"gru.{n}"] = t
        for i, layer in enumerate(self.conv3d):
            for n, t in layer.parameters().items():
                params[f"c3d.{i}.{n}"] = t
        for n, t in self.head.parameters().items():
            params[f"head.{n}"] = t
        return params

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def set_dropout(self, rate: float) -> None:
        for key in self.dropouts:
            self.dropouts[key] = DropoutSpec(rate)
        self.config = replace(self.config, dropout_rate=rate)


def build_model(cfg: Cg3dConfig, d_spatial: int, d_temporal: int, seed: int = 0, kind: str = "cg3d") -> Cg3dModel:
    """Initialize a model; each block draws from its own child of ``seed``,
    so a baseline shares its branch weights with a CG3D built from the same seed.
    """
    if kind not in MODEL_KINDS:
        raise ConfigError(f"model kind must be one of {MODEL_KINDS}, got {kind!r}")
    if d_spatial < 1 or d_temporal < 1:
        raise ConfigError(f"need positive feature dims, got spatial={d_spatial} temporal={d_temporal}")
    cfg.validate()
    if cfg.cnn_width < d_spatial:
        raise ConfigError(f"cnn_width {cfg.cnn_width} is narrower than {d_spatial} spatial features")
    if cfg.c3d_input_shape[2] < d_spatial + d_temporal:
        raise ConfigError(f"c3d width {cfg.c3d_input_shape[2]} is narrower than {d_spatial + d_temporal} features")
    cnn_shapes = cnn_shape_walk(cfg)
    c3d_shapes = c3d_shape_walk(cfg)

    rng_cnn, rng_gru, rng_c3d, rng_head = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4))
    model = Cg3dModel(cfg, kind, d_spatial, d_temporal)
    if model.uses_cnn_gru:
        for spec, (cin, _, _) in zip(cfg.cnn, cnn_shapes):
            model.conv2d.append(Conv2dLayer.init(rng_cnn, cin, spec.out_channels, spec.kernel, spec.activation))
        model.gru = GruCell.init(rng_gru, d_temporal, cfg.gru_hidden)
        model.dropouts["cnn_gru"] = DropoutSpec(cfg.dropout_rate)
    if model.uses_c3d:
        cin = 1
        for stage in cfg.c3d:
            model.conv3d.append(Conv3dLayer.init(rng_c3d, cin, stage.out_channels, stage.kernel, stage.activation))
            cin = stage.out_channels
        model.dropouts["c3d"] = DropoutSpec(cfg.dropout_rate)
    model.dropouts["head"] = DropoutSpec(cfg.dropout_rate)
    n_feat = sum(model.feature_sizes().values())
    model.head = DenseLayer.init(rng_head, n_feat, cfg.horizon * cfg.output_dim, "linear")
    return model


# ---------------------------------------------------------------------------
# forward passes


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


def _pad_last(x: Tensor, width: int) -> Tensor:
    extra = width - x.shape[-1]
    if extra == 0:
        return x
    return T.cat([x, Tensor._wrap(np.zeros(x.shape[:-1] + (extra,)))], axis=-1)


def _check_window(model: Cg3dModel, x: Tensor, d: int, what: str) -> None:
    if x.ndim != 3 or x.shape[1] != model.config.window or x.shape[2] != d:
        raise ShapeError(f"{what} window must be [B, {model.config.window}, {d}], got {x.shape}")


def forward_cnn_gru(model: Cg3dModel, spatial, temporal) -> Tensor:
    """``[B, W, d_spatial]``, ``[B, W, d_temporal]`` -> ``[B, conv_features + gru_hidden]``."""
    spatial, temporal = _as_input(spatial), _as_input(temporal)
    _check_window(model, spatial, model.d_spatial, "spatial")
    _check_window(model, temporal, model.d_temporal, "temporal")
    B, W = spatial.shape[:2]
    x = T.reshape(_pad_last(spatial, model.config.cnn_width), (B, 1, W, model.config.cnn_width))
    for layer in model.conv2d:
        x = layer(x)
    conv_flat = T.reshape(x, (B, x.size // B))
    hs = gru_sequence(model.gru, temporal)
    return T.concat(conv_flat, hs[:, W - 1, :], axis=1)


def forward_c3d(model: Cg3dModel, spatial, temporal) -> Tensor:
    """``[B, W, d_spatial]``, ``[B, W, d_temporal]`` -> ``[B, c3d_features]``."""
    spatial, temporal = _as_input(spatial), _as_input(temporal)
    _check_window(model, spatial, model.d_spatial, "spatial")
    _check_window(model, temporal, model.d_temporal, "temporal")
    B = spatial.shape[0]
    D, Hc, Wc = model.config.c3d_input_shape
    full = _pad_last(T.concat(spatial, temporal, axis=2), Wc)
    x = T.reshape(full, (B, 1, D, Hc, Wc))
    for layer, stage in zip(model.conv3d, model.config.c3d):
        x = layer(x)
        if stage.pool:
            x = T.max_pool3d(x)
    return T.reshape(x, (B, x.size // B))


def forward_batch(model: Cg3dModel, inputs, mode: str = "eval", rng=None) -> Tensor:
    """``[B, W, d_in]`` -> ``[B, horizon, output_dim]``."""
    x = _as_input(inputs)
    if x.ndim != 3 or x.shape[1:] != (model.config.window, model.d_in):
        raise ShapeError(f"inputs must be [B, {model.config.window}, {model.d_in}], got {x.shape}")
    ds = model.d_spatial
    spatial, temporal = x[:, :, :ds], x[:, :, ds:]
    segments = []
    if model.uses_cnn_gru:
        segments.append(dropout_forward(model.dropouts["cnn_gru"], forward_cnn_gru(model, spatial, temporal), rng, mode))
    if model.uses_c3d:
        segments.append(dropout_forward(model.dropouts["c3d"], forward_c3d(model, spatial, temporal), rng, mode))
    feats = segments[0] if len(segments) == 1 else T.cat(segments, axis=1)
    feats = dropout_forward(model.dropouts["head"], feats, rng, mode)
    out = model.head(feats)
    return T.reshape(out, (x.shape[0], model.config.horizon, model.config.output_dim))


def forward(model: Cg3dModel, sample, mode: str = "eval", rng=None) -> Tensor:
    """Single-window forward; ``sample`` is a WindowSample or a ``[W, d_in]`` array."""
    arr = getattr(sample, "input", sample)
    arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr, dtype=np.float64)
    out = forward_batch(model, arr[None], mode, rng)
    return T.reshape(out, out.shape[1:])


def forward_baseline(kind: str, model: Cg3dModel, sample, mode: str = "eval", rng=None) -> Tensor:
    if model.kind != kind:
        raise ConfigError(f"model was built as {model.kind!r}, not {kind!r}")
    if kind == "cg3d":
        raise ConfigError("forward_baseline takes 'c3d_only' or 'cnn_gru_only'")
    return forward(model, sample, mode, rng)


def predict(model: Cg3dModel, inputs: np.ndarray, mode: str = "eval", rng=None, batch_size: int = 256) -> np.ndarray:
    """Gradient-free batched prediction, ``[N, W, d_in]`` -> ``[N, horizon, 4]``."""
    out = []
    with no_grad():
        for s in range(0, len(inputs), batch_size):
            chunk_rng = rng[s : s + batch_size] if isinstance(rng, Sequence) else rng
            out.append(forward_batch(model, inputs[s : s + batch_size], mode, chunk_rng).data)
    if not out:
        return np.zeros((0, model.config.horizon, model.config.output_dim))
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: Cg3dModel, path, extra: dict | None = None) -> None:
    params = model.parameters()
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "d_spatial": model.d_spatial,
        "d_temporal": model.d_temporal,
        "config": model.config.to_dict(),
        "parameter_names": list(params),
        "extra": extra or {},
    }
    container.save(path, "checkpoint", meta, {n: t.data for n, t in params.items()})


def load_checkpoint(path) -> tuple[Cg3dModel, dict]:
    meta, arrays = container.load(path, "checkpoint")
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {meta.get('format_version')}")
    cfg = Cg3dConfig.from_dict(meta["config"])
    model = build_model(cfg, meta["d_spatial"], meta["d_temporal"], 0, meta["kind"])
    params = model.parameters()
    if list(params) != meta["parameter_names"]:
        raise ConfigError("checkpoint parameter names do not match the configured model")
    for name, t in params.items():
        if arrays[name].shape != t.shape:
            raise ShapeError(f"checkpoint {name} has shape {arrays[name].shape}, model expects {t.shape}")
        t.data = arrays[name].copy()
    return model, meta.get("extra", {})
