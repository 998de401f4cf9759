"""Monte Carlo dropout inference.

Pass ``i`` for key ``k`` draws its masks from ``seeding.rng(seed, "mc", *k, i)``,
so a batched run over many windows gives exactly the per-window results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeding
from .errors import ContractError
from .model import Cg3dModel, predict

DEFAULT_SAMPLES = 50


@dataclass(frozen=True)
class McPrediction:
    mean: np.ndarray
    std: np.ndarray
    T: int
    seed: int


def _stochastic(model: Cg3dModel) -> bool:
    return any(spec.rate > 0 for spec in model.dropouts.values())


def _pass_rngs(seed: int, key: tuple, T: int) -> list[np.random.Generator]:
    return [seeding.rng(seed, "mc", *key, i) for i in range(T)]


def mc_predict(model: Cg3dModel, sample, T: int = DEFAULT_SAMPLES, seed: int = 0, key: tuple = ()) -> McPrediction:
    if T < 1:
        raise ContractError(f"MC sample count must be >= 1, got {T}")
    x = np.asarray(getattr(sample, "input", sample), dtype=np.float64)
    if not _stochastic(model):
        out = predict(model, x[None])[0]
        return McPrediction(out, np.zeros_like(out), T, seed)
    passes = predict(model, np.broadcast_to(x, (T,) + x.shape), "mc", _pass_rngs(seed, key, T))
    if T == 1:
        return McPrediction(passes[0], np.zeros_like(passes[0]), T, seed)
    return McPrediction(passes.mean(axis=0), passes.std(axis=0), T, seed)


def mc_predict_batch(
    model: Cg3dModel, inputs: np.ndarray, T: int = DEFAULT_SAMPLES, seed: int = 0, batch_size: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and std for every window; row ``j`` uses key ``(j,)``."""
    if T < 1:
        raise ContractError(f"MC sample count must be >= 1, got {T}")
    inputs = np.asarray(inputs, dtype=np.float64)
    if not _stochastic(model):
        out = predict(model, inputs, batch_size=batch_size)
        return out, np.zeros_like(out)
    means, stds = [], []
    for j, x in enumerate(inputs):
        p = mc_predict(model, x, T, seed, key=(j,))
        means.append(p.mean)
        stds.append(p.std)
    shape = (0, model.config.horizon, model.config.output_dim)
    if not means:
        return np.zeros(shape), np.zeros(shape)
    return np.stack(means), np.stack(stds)
