"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. every entry of ``param``."""
    flat = param.data.reshape(-1)
    out = np.empty(flat.size)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(param.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|)``.

    Entries where both magnitudes are below ``floor`` are exempt.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.abs(a), np.abs(n))
    live = scale >= floor
    if not live.any():
        return 0.0
    return float(np.max(np.abs(a - n)[live] / scale[live]))


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> dict[int, float]:
    """Return the max relative error per parameter index."""
    for p in params:
        p.zero_grad()
    loss = fn()
    backward(loss)
    errors = {}
    for i, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros(p.shape)
        errors[i] = relative_error(analytic, numeric_grad(fn, p, h))
    return errors
