"""Layer primitives: 2D/3D convolution, GRU cell, dense layer, dropout."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor

DROPOUT_MODES = ("train", "eval", "mc")


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class Conv2dLayer:
    kernels: Tensor  # [n_out, n_in, P, Q]
    bias: Tensor  # [n_out]
    activation: str = "relu"

    def __post_init__(self):
        if self.kernels.ndim != 4:
            raise ShapeError(f"conv2d kernels must be [out, in, P, Q], got {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.kernels.shape[0]},)")

    @classmethod
    def init(cls, rng, n_in: int, n_out: int, kernel: tuple[int, int], activation: str = "relu") -> "Conv2dLayer":
        p, q = kernel
        w = glorot_uniform(rng, (n_out, n_in, p, q), n_in * p * q, n_out * p * q)
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros(n_out), requires_grad=True), activation)

    @property
    def n_in(self) -> int:
        return self.kernels.shape[1]

    @property
    def n_out(self) -> int:
        return self.kernels.shape[0]

    def output_shape(self, h: int, w: int) -> tuple[int, int]:
        p, q = self.kernels.shape[2:]
        return h - p + 1, w - q + 1

    def parameters(self) -> dict[str, Tensor]:
        return {"kernels": self.kernels, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d_layer_forward(self, x)


@dataclass
class Conv3dLayer:
    kernels: Tensor  # [j_out, m_in, R, P, Q]
    bias: Tensor
    activation: str = "relu"

    def __post_init__(self):
        if self.kernels.ndim != 5:
            raise ShapeError(f"conv3d kernels must be [out, in, R, P, Q], got {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.kernels.shape[0]},)")

    @classmethod
    def init(cls, rng, n_in: int, n_out: int, kernel=(3, 3, 3), activation: str = "relu") -> "Conv3dLayer":
        vol = int(np.prod(kernel))
        w = glorot_uniform(rng, (n_out, n_in) + tuple(kernel), n_in * vol, n_out * vol)
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros(n_out), requires_grad=True), activation)

    @property
    def n_in(self) -> int:
        return self.kernels.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        return {"kernels": self.kernels, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return conv3d_layer_forward(self, x)


def conv2d_layer_forward(layer: Conv2dLayer, x: Tensor) -> Tensor:
    ch = x.shape[-3] if x.ndim >= 3 else None
    if ch != layer.n_in:
        raise ShapeError(f"conv2d layer expects {layer.n_in} input channels, got input {x.shape}")
    return T.activate(T.conv2d_valid(x, layer.kernels, layer.bias), layer.activation)


def conv3d_layer_forward(layer: Conv3dLayer, x: Tensor) -> Tensor:
    ch = x.shape[-4] if x.ndim >= 4 else None
    if ch != layer.n_in:
        raise ShapeError(f"conv3d layer expects {layer.n_in} input channels, got input {x.shape}")
    return T.activate(T.conv3d_valid(x, layer.kernels, layer.bias), layer.activation)


@dataclass
class DenseLayer:
    weight: Tensor  # [out, in]
    bias: Tensor  # [out]
    activation: str = "linear"

    def __post_init__(self):
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"dense bias {self.bias.shape} does not match weight {self.weight.shape}")

    @classmethod
    def init(cls, rng, n_in: int, n_out: int, activation: str = "linear") -> "DenseLayer":
        w = glorot_uniform(rng, (n_out, n_in), n_in, n_out)
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros(n_out), requires_grad=True), activation)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        """``x`` is ``[in]`` or ``[B, in]``."""
        single = x.ndim == 1
        x2 = T.reshape(x, (1, x.shape[0])) if single else x
        if x2.ndim != 2 or x2.shape[1] != self.weight.shape[1]:
            raise ShapeError(f"dense layer expects [B, {self.weight.shape[1]}], got {x.shape}")
        y = T.activate(T.add(T.matmul(x2, T.transpose(self.weight)), self.bias), self.activation)
        return T.reshape(y, (y.shape[1],)) if single else y


# ---------------------------------------------------------------------------
# GRU


class GruStep(NamedTuple):
    z: Tensor
    r: Tensor
    candidate: Tensor
    h: Tensor


@dataclass
class GruCell:
    """Bias-free GRU cell.

    Weight matrices follow the ``W x`` convention: ``W_*`` are
    ``[hidden, input]`` and ``U_*`` are ``[hidden, hidden]``.
    """

    W_z: Tensor
    U_z: Tensor
    W_r: Tensor
    U_r: Tensor
    W_h: Tensor
    U_h: Tensor
    b_z: Tensor | None = None
    b_r: Tensor | None = None
    b_h: Tensor | None = None

    def __post_init__(self):
        hid, inp = self.W_z.shape
        for name in ("W_z", "W_r", "W_h"):
            if getattr(self, name).shape != (hid, inp):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(hid, inp)}")
        for name in ("U_z", "U_r", "U_h"):
            if getattr(self, name).shape != (hid, hid):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(hid, hid)}")
        for name in ("b_z", "b_r", "b_h"):
            b = getattr(self, name)
            if b is not None and b.shape != (hid,):
                raise ShapeError(f"{name} has shape {b.shape}, expected ({hid},)")

    @classmethod
    def init(cls, rng, input_dim: int, hidden_dim: int, biases: bool = False) -> "GruCell":
        def w():
            return Tensor(glorot_uniform(rng, (hidden_dim, input_dim), input_dim, hidden_dim), requires_grad=True)

        def u():
            return Tensor(glorot_uniform(rng, (hidden_dim, hidden_dim), hidden_dim, hidden_dim), requires_grad=True)

        W_z, U_z, W_r, U_r, W_h, U_h = w(), u(), w(), u(), w(), u()
        bs = [Tensor(np.zeros(hidden_dim), requires_grad=True) for _ in range(3)] if biases else [None] * 3
        return cls(W_z, U_z, W_r, U_r, W_h, U_h, *bs)

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_z.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        names = ("W_z", "U_z", "W_r", "U_r", "W_h", "U_h", "b_z", "b_r", "b_h")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}


def _gate(pre: Tensor, bias: Tensor | None) -> Tensor:
    return pre if bias is None else T.add(pre, bias)


def _gru_step(cell: GruCell, xw: tuple[Tensor, Tensor, Tensor], h: Tensor, Ut: tuple[Tensor, Tensor, Tensor], force_update=None) -> GruStep:
    # xw: precomputed input projections (x W_z^T, x W_r^T, x W_h^T), each [B, hidden]
    xz, xr, xh = xw
    Uzt, Urt, Uht = Ut
    if force_update is None:
        z = T.sigmoid(_gate(T.add(xz, T.matmul(h, Uzt)), cell.b_z))
    else:
        z = Tensor._wrap(np.broadcast_to(np.asarray(force_update, dtype=np.float64), h.shape).copy())
    r = T.sigmoid(_gate(T.add(xr, T.matmul(h, Urt)), cell.b_r))
    cand = T.tanh(_gate(T.add(xh, T.mul(r, T.matmul(h, Uht))), cell.b_h))
    h_new = T.add(T.mul(z, h), T.mul(T.sub(1.0, z), cand))
    return GruStep(z, r, cand, h_new)


def _as_batch(x: Tensor, dim: int, what: str) -> tuple[Tensor, bool]:
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ShapeError(f"{what} has length {x.shape[0]}, expected {dim}")
        return T.reshape(x, (1, dim)), True
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"{what} has shape {x.shape}, expected [B, {dim}]")
    return x, False


def gru_cell_step(cell: GruCell, x_t: Tensor, h_prev: Tensor, force_update=None) -> GruStep:
    """One GRU update; returns all intermediate gate values.

    ``force_update`` replaces the update gate with a constant (test hook).
    Vectors may be unbatched ``[dim]`` or batched ``[B, dim]``.
    """
    x2, single = _as_batch(x_t, cell.input_dim, "x_t")
    h2, h_single = _as_batch(h_prev, cell.hidden_dim, "h_prev")
    if x2.shape[0] != h2.shape[0]:
        raise ShapeError(f"batch mismatch: x_t {x_t.shape}, h_prev {h_prev.shape}")
    Ut = (T.transpose(cell.U_z), T.transpose(cell.U_r), T.transpose(cell.U_h))
    xw = tuple(T.matmul(x2, T.transpose(W)) for W in (cell.W_z, cell.W_r, cell.W_h))
    step = _gru_step(cell, xw, h2, Ut, force_update)
    if single and h_single:
        hid = cell.hidden_dim
        return GruStep(*(T.reshape(t, (hid,)) for t in step))
    return step


def gru_sequence(cell: GruCell, xs: Tensor, h0: Tensor | None = None) -> Tensor:
    """Run the cell over ``xs`` (``[T, input]`` or ``[B, T, input]``).

    Returns the stacked hidden states, ``[T, hidden]`` or ``[B, T, hidden]``.
    ``h0`` defaults to zeros.
    """
    batched = xs.ndim == 3
    if xs.ndim not in (2, 3):
        raise ShapeError(f"gru_sequence expects [T, in] or [B, T, in], got {xs.shape}")
    if xs.shape[-2] < 1:
        raise ContractError("gru_sequence needs at least one step")
    X = xs if batched else T.reshape(xs, (1,) + xs.shape)
    B, steps, inp = X.shape
    if inp != cell.input_dim:
        raise ShapeError(f"sequence feature dim {inp} != cell input dim {cell.input_dim}")
    hid = cell.hidden_dim
    if h0 is None:
        h = Tensor._wrap(np.zeros((B, hid)))
    else:
        h = h0 if h0.ndim == 2 else T.reshape(h0, (1, hid))
        if h.shape != (B, hid):
            raise ShapeError(f"h0 shape {h0.shape} does not match batch {B} x hidden {hid}")

    flat = T.reshape(X, (B * steps, inp))
    # one projection per gate for the whole sequence, then sliced per step
    proj = [T.reshape(T.matmul(flat, T.transpose(W)), (B, steps, hid)) for W in (cell.W_z, cell.W_r, cell.W_h)]
    Ut = (T.transpose(cell.U_z), T.transpose(cell.U_r), T.transpose(cell.U_h))
    hs = []
    for t in range(steps):
        xw = tuple(p[:, t, :] for p in proj)
        h = _gru_step(cell, xw, h, Ut).h
        hs.append(h)
    out = T.stack(hs, axis=1)
    return out if batched else T.reshape(out, (steps, hid))


# ---------------------------------------------------------------------------
# dropout


@dataclass
class DropoutSpec:
    rate: float = 0.0
    mode: str = "train"

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.mode not in DROPOUT_MODES:
            raise ConfigError(f"dropout mode must be one of {DROPOUT_MODES}, got {self.mode!r}")


def dropout_forward(spec: DropoutSpec, x: Tensor, rng=None, mode: str | None = None) -> Tensor:
    """Inverted dropout.

    ``rng`` is a ``numpy.random.Generator`` or a sequence of generators,
    one per leading (batch) row; the latter lets batched Monte Carlo passes
    reproduce independent single-sample passes exactly.
    """
    mode = spec.mode if mode is None else mode
    if mode not in DROPOUT_MODES:
        raise ConfigError(f"dropout mode must be one of {DROPOUT_MODES}, got {mode!r}")
    if mode == "eval" or spec.rate == 0.0:
        return x
    if rng is None:
        raise ContractError("stochastic dropout needs a random generator")
    keep = 1.0 - spec.rate
    if isinstance(rng, np.random.Generator):
        u = rng.random(x.shape)
    else:
        rngs: Sequence[np.random.Generator] = rng
        if len(rngs) != x.shape[0]:
            raise ContractError(f"got {len(rngs)} generators for {x.shape[0]} rows")
        u = np.stack([g.random(x.shape[1:]) for g in rngs])
    mask = (u < keep) / keep
    return T.mul(x, Tensor._wrap(mask))
