"""Run configuration: flat ``section.key=value`` files plus flag overrides.

Example::

    seed=3
    train.epochs=30
    train.batch_size=32
    model.cnn=8:3x3:relu,8:3x3:relu
    model.c3d=8:3x3x3:pool:relu,16:3x3x3:pool:relu
    model.c3d_input_shape=10x10x10

Layer lists use ``channels:kernel:activation`` for conv2d layers and
``channels:kernel:pool|nopool:activation`` for conv3d stages.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import seeding
from .adsb import SynthConfig
from .errors import ConfigError
from .model import C3dStage, Cg3dConfig, ConvSpec
from .preprocess import PreprocessConfig
from .tensor import ACTIVATIONS
from .train import TrainConfig


@dataclass
class IngestConfig:
    gap_threshold: float = 900.0

    def validate(self) -> None:
        if not self.gap_threshold > 0:
            raise ConfigError(f"ingest.gap_threshold must be positive, got {self.gap_threshold}")


@dataclass
class McConfig:
    samples: int = 50

    def validate(self) -> None:
        if self.samples < 1:
            raise ConfigError(f"mc.samples must be >= 1, got {self.samples}")


@dataclass
class RunConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: Cg3dConfig = field(default_factory=Cg3dConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mc: McConfig = field(default_factory=McConfig)

    SECTIONS = ("synth", "ingest", "preprocess", "model", "train", "mc")

    def validate(self) -> None:
        for name in self.SECTIONS:
            getattr(self, name).validate()
        if self.model.window != self.preprocess.window:
            raise ConfigError(f"model.window {self.model.window} != preprocess.window {self.preprocess.window}")
        if self.model.horizon != self.preprocess.horizon:
            raise ConfigError(f"model.horizon {self.model.horizon} != preprocess.horizon {self.preprocess.horizon}")

    # seeds for each consumer, all derived from the root
    def synth_config(self) -> SynthConfig:
        return replace(self.synth, seed=self.seed)

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    @property
    def model_seed(self) -> int:
        return seeding.derive_int(self.seed, "model")

    def to_lines(self) -> list[str]:
        lines = [f"seed={self.seed}"]
        for name in self.SECTIONS:
            section = getattr(self, name)
            for f in fields(section):
                if name in ("synth", "train") and f.name == "seed":
                    continue
                lines.append(f"{name}.{f.name}={format_value(getattr(section, f.name))}")
        return lines


# ---------------------------------------------------------------------------
# value parsing


def parse_conv_specs(text: str) -> tuple[ConvSpec, ...]:
    out = []
    for item in _items(text):
        parts = item.split(":")
        if len(parts) not in (2, 3):
            raise ConfigError(f"conv layer {item!r} is not channels:PxQ[:activation]")
        kernel = _dims(parts[1], 2, item)
        out.append(ConvSpec(_int(parts[0], item), kernel, _activation(parts[2] if len(parts) == 3 else "relu")))
    return tuple(out)


def parse_c3d_stages(text: str) -> tuple[C3dStage, ...]:
    out = []
    for item in _items(text):
        parts = item.split(":")
        if len(parts) not in (2, 3, 4):
            raise ConfigError(f"c3d stage {item!r} is not channels:AxBxC[:pool|nopool][:activation]")
        pool, act = True, "relu"
        for extra in parts[2:]:
            if extra in ("pool", "nopool"):
                pool = extra == "pool"
            else:
                act = _activation(extra)
        out.append(C3dStage(_int(parts[0], item), _dims(parts[1], 3, item), pool, act))
    return tuple(out)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple) and v and isinstance(v[0], ConvSpec):
        return ",".join(f"{s.out_channels}:{'x'.join(map(str, s.kernel))}:{s.activation}" for s in v)
    if isinstance(v, tuple) and v and isinstance(v[0], C3dStage):
        return ",".join(
            f"{s.out_channels}:{'x'.join(map(str, s.kernel))}:{'pool' if s.pool else 'nopool'}:{s.activation}" for s in v
        )
    if isinstance(v, tuple):
        return "x".join(map(str, v))
    return repr(v) if isinstance(v, float) else str(v)


def _items(text: str) -> list[str]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ConfigError("layer list is empty")
    return items


def _int(text: str, ctx: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer in {ctx!r}, got {text!r}") from None


def _dims(text: str, n: int, ctx: str) -> tuple[int, ...]:
    dims = tuple(_int(p, ctx) for p in text.lower().split("x"))
    if len(dims) != n:
        raise ConfigError(f"expected {n} dims in {ctx!r}, got {text!r}")
    return dims


def _activation(name: str) -> str:
    if name not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}")
    return name


def _coerce(section: str, f: dataclasses.Field, text: str):
    key = f"{section}.{f.name}"
    if f.name == "cnn":
        return parse_conv_specs(text)
    if f.name == "c3d":
        return parse_c3d_stages(text)
    if f.name == "c3d_input_shape":
        return _dims(text, 3, key)
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return text.lower() in ("true", "1")
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None
    return text


def apply_setting(cfg: RunConfig, key: str, text: str) -> RunConfig:
    key = key.strip()
    text = text.strip()
    if key == "seed":
        return replace(cfg, seed=_int(text, key))
    section, _, name = key.partition(".")
    if section not in RunConfig.SECTIONS or not name:
        raise ConfigError(f"unknown config key {key!r}")
    obj = getattr(cfg, section)
    by_name = {f.name: f for f in fields(obj)}
    if name not in by_name:
        raise ConfigError(f"unknown config key {key!r}")
    return replace(cfg, **{section: replace(obj, **{name: _coerce(section, by_name[name], text)})})


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        cfg = apply_setting(cfg, key, value)
    return cfg


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read ``path`` (if any), apply ``overrides`` and validate everything."""
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        cfg = parse_config_text(text, cfg)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg = apply_setting(cfg, key, str(value))
    cfg.validate()
    return cfg
