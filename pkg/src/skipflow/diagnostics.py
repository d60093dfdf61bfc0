"""Whole-model gradient check on a small random instance."""

from __future__ import annotations

import numpy as np

from .model import ModelConfig, SkipFlowModel
from .numerics import GradCheckReport, grad_check
from .text import PAD
from .training import mse, mse_grad

SMALL = dict(vocab_size=20, max_len=12, embed_dim=8, hidden_dim=8, delta=4, slices=3, dense_dim=8)


def random_instance(config: ModelConfig, seed: int = 0, batch: int = 4):
    """Model with every parameter drawn from U(-1, 1), plus a padded batch."""
    model = SkipFlowModel(config, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    for p in model.blocks():
        p.values[...] = rng.uniform(-1.0, 1.0, size=p.shape)
    model.embedding.W_e.values[PAD] = 0.0
    L = config.max_len
    lengths = np.linspace(L, max(1, L // 4), batch).round().astype(np.int64)
    ids = rng.integers(1, config.vocab_size, size=(batch, L))
    for b, n in enumerate(lengths):
        ids[b, n:] = PAD
    targets = rng.uniform(0.0, 1.0, size=batch)
    return model, ids, lengths, targets


def check_model_gradients(
    config: ModelConfig, seed: int = 0, h: float = 1e-5, tol: float = 1e-4, corrupt: str | None = None
) -> GradCheckReport:
    model, ids, lengths, targets = random_instance(config, seed)

    def loss_and_grad():
        model.zero_grad()
        y, _, cache = model.forward(ids, lengths)
        model.backward(cache, mse_grad(y, targets), corrupt=corrupt)
        return mse(y, targets)

    return grad_check(loss_and_grad, model.blocks(), h=h, tol=tol, seed=seed)
