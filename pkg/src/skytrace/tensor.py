"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation creates a :class:`Node` holding the inputs,
the output and a closure mapping the output gradient to input gradients.
While a :class:`Tape` is active the nodes are also appended to it, so the
tape order is the execution order (a valid topological order). Calling
:func:`backward` replays the nodes in reverse.

Broadcasting is deliberately narrow. ``add``/``sub``/``mul`` accept

* identical shapes,
* a scalar operand (shape ``()`` or a Python number),
* a "bias" operand whose shape equals the trailing dimensions of the other
  operand, e.g. ``[B, n] + [n]``. The bias gradient is summed over the
  leading axes.

Anything else raises :class:`~skytrace.errors.ShapeError`.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "Node",
    "tensor",
    "no_grad",
    "backward",
    "matmul",
    "transpose",
    "elementwise",
    "add",
    "sub",
    "mul",
    "neg",
    "activate",
    "sigmoid",
    "tanh",
    "relu",
    "conv2d_valid",
    "conv3d_valid",
    "max_pool3d",
    "concat",
    "cat",
    "stack",
    "reshape",
    "tsum",
    "mean",
]

ACTIVATIONS = ("sigmoid", "tanh", "relu", "linear")

_grad_enabled = True
_active_tapes: list["Tape"] = []


class Node:
    __slots__ = ("kind", "inputs", "output", "backward_fn", "tape", "index")

    def __init__(self, kind: str, inputs: tuple["Tensor", ...], output: "Tensor", backward_fn: Callable):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.tape: Tape | None = None
        self.index = -1

    def __repr__(self) -> str:
        return f"Node({self.kind}, inputs={[t.shape for t in self.inputs]}, out={self.output.shape})"


class Tape:
    """Ordered record of the operations executed while it is active.

    Use as a context manager::

        with Tape() as tape:
            loss = mean(mul(x, x))
        backward(loss, tape)
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tapes.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Node) -> None:
        node.tape = self
        node.index = len(self.nodes)
        self.nodes.append(node)

    def is_topological(self) -> bool:
        """True when every input produced on this tape precedes its consumer."""
        for node in self.nodes:
            for t in node.inputs:
                src = t._node
                if src is not None and src.tape is self and src.index >= node.index:
                    return False
        return True


@contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional row-major array of float64 values with an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim and 0 in arr.shape:
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._node: Node | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t._node = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return mean(self)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.array(x, dtype=np.float64))


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], kind: str, backward_fn: Callable) -> Tensor:
    out = Tensor._wrap(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(kind, inputs, out, backward_fn)
        out._node = node
        if _active_tapes:
            _active_tapes[-1].record(node)
    return out


class _SliceGrad:
    """Gradient contribution confined to ``index`` of the input."""

    __slots__ = ("index", "value")

    def __init__(self, index, value: np.ndarray):
        self.index = index
        self.value = value


# ---------------------------------------------------------------------------
# backward


def _topological_nodes(loss: Tensor) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss._node, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for t in node.inputs:
            if t._node is not None and id(t._node) not in seen:
                stack.append((t._node, False))
    return order


def backward(loss: Tensor, tape: Tape | None = None) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(leaf) to every tracked leaf reachable from ``loss``.

    Gradients accumulate additively into ``leaf.grad``. Returns a mapping
    from each leaf to the gradient contributed by this call.
    """
    if loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise ContractError("loss was not produced by any tracked operation")
    if tape is not None:
        if loss._node.tape is not tape:
            raise ContractError("loss was not produced through the given tape")
        order = tape.nodes[: loss._node.index + 1]
    else:
        order = _topological_nodes(loss)

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    owned: set[int] = set()
    leaves: dict[int, Tensor] = {}

    def accumulate(t: Tensor, g) -> None:
        key = id(t)
        if isinstance(g, _SliceGrad):
            cur = grads.get(key)
            if cur is None:
                cur = np.zeros(t.shape, dtype=np.float64)
            elif key not in owned:
                cur = cur.copy()
            cur[g.index] += g.value
            grads[key] = cur
            owned.add(key)
        elif key in grads:
            if key in owned:
                grads[key] += g
            else:
                grads[key] = grads[key] + g
                owned.add(key)
        else:
            grads[key] = g

    for node in reversed(order):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            accumulate(t, gi)
            if t._node is None:
                leaves[id(t)] = t

    result: dict[Tensor, np.ndarray] = {}
    for key, t in leaves.items():
        g = np.asarray(grads[key], dtype=np.float64).reshape(t.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g
        result[t] = g
    return result


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of ``[m, k]`` and ``[k, n]``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        return (g @ B.T if a.requires_grad else None, A.T @ g if b.requires_grad else None)

    return _make(A @ B, (a, b), "matmul", bw)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.shape}")
    return _make(np.ascontiguousarray(a.data.T), (a,), "transpose", lambda g: (g.T,))


# ---------------------------------------------------------------------------
# elementwise


def _broadcast_kind(sa: tuple, sb: tuple) -> str:
    if sa == sb:
        return "same"
    if len(sb) == 0:
        return "b_scalar"
    if len(sa) == 0:
        return "a_scalar"
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return "b_bias"
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return "a_bias"
    raise ShapeError(f"incompatible shapes {sa} and {sb}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


def elementwise(a, b, kind: str) -> Tensor:
    """``kind`` is ``"add"`` or ``"hadamard"``."""
    if kind == "add":
        return add(a, b)
    if kind == "hadamard":
        return mul(a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def bw(g):
        return (_reduce_to(g, sa) if a.requires_grad else None, _reduce_to(g, sb) if b.requires_grad else None)

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def bw(g):
        return (_reduce_to(g, sa) if a.requires_grad else None, -_reduce_to(g, sb) if b.requires_grad else None)

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b) -> Tensor:
    """Hadamard (elementwise) product."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind(a.shape, b.shape)
    A, B = a.data, b.data

    def bw(g):
        return (
            _reduce_to(g * B, A.shape) if a.requires_grad else None,
            _reduce_to(g * A, B.shape) if b.requires_grad else None,
        )

    return _make(A * B, (a, b), "mul", bw)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), "neg", lambda g: (-g,))


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    # tanh form is overflow-free and gives sigmoid(0) == 0.5 exactly
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(y, (x,), "sigmoid", lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), "tanh", lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), "relu", lambda g: (g * pos,))


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "relu":
        return relu(x)
    if kind == "linear":
        return _as_tensor(x)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


# ---------------------------------------------------------------------------
# convolution and pooling


def _correlate(x: Tensor, k: Tensor, bias: Tensor, n: int, kind: str) -> Tensor:
    x, k, bias = _as_tensor(x), _as_tensor(k), _as_tensor(bias)
    batched = x.ndim == n + 2
    if x.ndim not in (n + 1, n + 2):
        raise ShapeError(f"{kind}: input must have {n + 1} or {n + 2} dims, got {x.shape}")
    if k.ndim != n + 2:
        raise ShapeError(f"{kind}: kernels must have {n + 2} dims, got {k.shape}")
    X = x.data if batched else x.data[None]
    K = k.data
    out_ch, in_ch = K.shape[:2]
    if X.shape[1] != in_ch:
        raise ShapeError(f"{kind}: input has {X.shape[1]} channels, kernels expect {in_ch} (input {x.shape}, kernels {k.shape})")
    if bias.shape != (out_ch,):
        raise ShapeError(f"{kind}: bias shape {bias.shape} does not match {out_ch} output channels")
    spatial, ksize = X.shape[2:], K.shape[2:]
    if any(kd > sd for kd, sd in zip(ksize, spatial)):
        raise ShapeError(f"{kind}: kernel {ksize} larger than input {spatial}")
    out_sp = tuple(sd - kd + 1 for sd, kd in zip(spatial, ksize))

    sp_axes = tuple(range(2, 2 + n))
    win = sliding_window_view(X, ksize, axis=sp_axes)  # B, C, *out_sp, *ksize
    win_axes = [1] + list(range(2 + n, 2 + 2 * n))
    Y = np.tensordot(win, K, axes=(win_axes, [1] + list(range(2, 2 + n))))  # B, *out_sp, O
    Y = np.moveaxis(Y, -1, 1) + bias.data.reshape((1, out_ch) + (1,) * n)
    Y = np.ascontiguousarray(Y)

    def bw(g):
        G = g if batched else g[None]
        gx = gk = gb = None
        if bias.requires_grad:
            gb = G.sum(axis=(0,) + sp_axes)
        if k.requires_grad:
            gk = np.tensordot(G, win, axes=((0,) + sp_axes, (0,) + sp_axes))
        if x.requires_grad:
            gx = np.zeros(X.shape, dtype=np.float64)
            for off in itertools.product(*(range(kd) for kd in ksize)):
                sl = tuple(slice(o, o + s) for o, s in zip(off, out_sp))
                contrib = np.tensordot(G, K[(slice(None), slice(None)) + off], axes=([1], [0]))
                gx[(slice(None), slice(None)) + sl] += np.moveaxis(contrib, -1, 1)
            if not batched:
                gx = gx[0]
        return gx, gk, gb

    return _make(Y if batched else Y[0], (x, k, bias), kind, bw)


def conv2d_valid(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid 2D cross-correlation summed over input channels, plus bias.

    ``x`` is ``[C, H, W]`` or batched ``[B, C, H, W]``; ``kernels`` is
    ``[O, C, P, Q]``; output is ``[(B,) O, H-P+1, W-Q+1]``.
    """
    return _correlate(x, kernels, bias, 2, "conv2d")


def conv3d_valid(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid 3D cross-correlation; ``x`` is ``[(B,) C, D, H, W]``."""
    return _correlate(x, kernels, bias, 3, "conv3d")


def max_pool3d(x: Tensor) -> Tensor:
    """Non-overlapping 2x2x2 max pool; trailing odd slices are dropped.

    Gradient goes to the first maximal element of each block in row-major
    order.
    """
    x = _as_tensor(x)
    if x.ndim not in (4, 5):
        raise ShapeError(f"max_pool3d expects [(B,) C, D, H, W], got {x.shape}")
    batched = x.ndim == 5
    X = x.data if batched else x.data[None]
    B, C, D, H, W = X.shape
    if min(D, H, W) < 2:
        raise ShapeError(f"max_pool3d needs every spatial dim >= 2, got {(D, H, W)}")
    D2, H2, W2 = D // 2, H // 2, W // 2
    blocks = (
        X[:, :, : 2 * D2, : 2 * H2, : 2 * W2]
        .reshape(B, C, D2, 2, H2, 2, W2, 2)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(B, C, D2, H2, W2, 8)
    )
    idx = blocks.argmax(axis=-1)[..., None]
    Y = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def bw(g):
        G = g if batched else g[None]
        gb = np.zeros((B, C, D2, H2, W2, 8), dtype=np.float64)
        np.put_along_axis(gb, idx, G[..., None], axis=-1)
        gb = gb.reshape(B, C, D2, H2, W2, 2, 2, 2).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        gx = np.zeros(X.shape, dtype=np.float64)
        gx[:, :, : 2 * D2, : 2 * H2, : 2 * W2] = gb.reshape(B, C, 2 * D2, 2 * H2, 2 * W2)
        return (gx if batched else gx[0],)

    return _make(Y if batched else Y[0], (x,), "max_pool3d", bw)


# ---------------------------------------------------------------------------
# structural


def cat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("cannot concatenate an empty sequence")
    ref = ts[0].shape
    ax = axis % len(ref) if ref else 0
    for t in ts[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def bw(g):
        out = []
        for i in range(len(ts)):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(sl)])
        return tuple(out)

    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, "concat", bw)


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    return cat((a, b), axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("cannot stack an empty sequence")
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError(f"stack: shapes {ts[0].shape} and {t.shape} differ")
    Y = np.stack([t.data for t in ts], axis=axis)
    ax = axis % Y.ndim

    def bw(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return _make(Y, ts, "stack", bw)


def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape) or int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) to {shape}")
    src = x.shape
    return _make(x.data.reshape(shape), (x,), "reshape", lambda g: (g.reshape(src),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def getitem(x: Tensor, index) -> Tensor:
    x = _as_tensor(x)
    Y = x.data[index]
    if not isinstance(Y, np.ndarray):
        Y = np.array(Y)
    basic = _is_basic_index(index)

    def bw(g):
        if basic:
            return (_SliceGrad(index, g),)
        gx = np.zeros(x.shape, dtype=np.float64)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(Y, (x,), "getitem", bw)


def tsum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    return _make(np.array(x.data.sum()), (x,), "sum", lambda g: (np.full(shape, float(g)),))


def mean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shape, n = x.shape, x.size
    return _make(np.array(x.data.sum() / n), (x,), "mean", lambda g: (np.full(shape, float(g) / n),))
