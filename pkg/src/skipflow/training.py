"""Mini-batch MSE training with Adam, dev-set model selection and evaluation."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericalError
from .metrics import quadratic_weighted_kappa
from .model import ModelConfig, SkipFlowModel
from .numerics import AdamState, adam_step, clip_global_norm
from .text import EncodedSet, ScoreScale, denormalize_score

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 64
    clip_norm: float = 1.0
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        bad = [k for k in ("lr", "batch_size", "clip_norm", "epochs") if not getattr(self, k) > 0]
        if bad:
            raise ConfigurationError(f"training settings must be positive: {', '.join(f'{k}={getattr(self, k)}' for k in bad)}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    """Per-epoch history; ``best_epoch`` is 1-based.

    ``epoch_seconds`` is wall-clock and is left out of :meth:`to_dict` so
    that serialized reports are reproducible byte for byte.
    """

    train_mse: list[float] = field(default_factory=list)
    dev_qwk: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_qwk: float = -math.inf
    test_qwk: float | None = None
    epoch_seconds: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "epochs": len(self.train_mse),
            "train_mse": self.train_mse,
            "dev_qwk": self.dev_qwk,
            "best_epoch": self.best_epoch,
            "best_dev_qwk": self.best_dev_qwk,
            "test_qwk": self.test_qwk,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def mse(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise DimensionError(f"mse: predictions {preds.shape} vs targets {targets.shape}")
    if preds.size == 0:
        raise DimensionError("mse of an empty batch")
    return float(np.mean((preds - targets) ** 2))


def mse_grad(preds, targets) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise DimensionError(f"mse: predictions {preds.shape} vs targets {targets.shape}")
    return 2.0 * (preds - targets) / preds.size


@dataclass
class Evaluation:
    qwk: float
    essay_ids: np.ndarray
    gold: np.ndarray
    predicted: np.ndarray
    predicted_int: np.ndarray

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["essay_id", "gold", "predicted_normalized", "predicted_integer"])
            for row in zip(self.essay_ids.tolist(), self.gold.tolist(), self.predicted.tolist(), self.predicted_int.tolist()):
                w.writerow([row[0], row[1], repr(row[2]), row[3]])


def evaluate(model: SkipFlowModel, essays: EncodedSet, scale: ScoreScale, prompt_id: int | None = None) -> Evaluation:
    """Predict, rescale to integers and score against the gold marks."""
    if prompt_id is not None and essays.prompt_id != prompt_id:
        raise ConfigurationError(f"model was trained on prompt {prompt_id} but data is prompt {essays.prompt_id}")
    if len(essays) == 0:
        raise ConfigurationError("cannot evaluate on an empty set")
    y = model.predict(essays.ids, essays.lengths)
    pred_int = denormalize_score(y, scale)
    kappa = quadratic_weighted_kappa(essays.scores, pred_int, scale.min_score, scale.max_score)
    return Evaluation(kappa, essays.essay_ids, essays.scores, y, np.atleast_1d(pred_int))


def train_step(model: SkipFlowModel, batch: EncodedSet, opt: AdamState, clip_norm: float) -> float:
    """One forward/backward/clip/Adam update; returns the batch MSE."""
    y, _, cache = model.forward(batch.ids, batch.lengths)
    loss = mse(y, batch.targets)
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite batch loss {loss}")
    model.zero_grad()
    model.backward(cache, mse_grad(y, batch.targets))
    blocks = model.blocks()
    clip_global_norm([p.grad for p in blocks], clip_norm)
    adam_step(blocks, opt)
    return loss


def train(
    model_config: ModelConfig,
    train_set: EncodedSet,
    dev_set: EncodedSet,
    test_set: EncodedSet | None,
    train_config: TrainConfig,
    scale: ScoreScale,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> tuple[TrainReport, SkipFlowModel]:
    """Train for ``train_config.epochs`` epochs; return the report and the best model.

    The returned model holds the parameters of the epoch with the highest
    dev QWK (earliest epoch on ties). Only ``train_set`` reaches backward.
    """
    if len(train_set) == 0 or len(dev_set) == 0:
        raise ConfigurationError("train and dev sets must be non-empty")
    if train_set.ids.shape[1] != model_config.max_len:
        raise DimensionError(f"essays padded to {train_set.ids.shape[1]}, model max_len is {model_config.max_len}")
    model = SkipFlowModel(model_config, seed=train_config.seed, mean_target=float(np.mean(train_set.targets)))
    opt = AdamState(lr=train_config.lr)
    report = TrainReport()
    best_state = model.state_dict()
    n = len(train_set)
    bs = train_config.batch_size
    for epoch in range(1, train_config.epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([train_config.seed, epoch]).permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, bs)):
            batch = train_set.subset(order[start : start + bs])
            try:
                total += train_step(model, batch, opt, train_config.clip_norm) * len(batch)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, batch {b}: {exc}") from None
        train_mse = total / n
        dev_kappa = evaluate(model, dev_set, scale).qwk
        report.train_mse.append(train_mse)
        report.dev_qwk.append(dev_kappa)
        if dev_kappa > report.best_dev_qwk:
            report.best_dev_qwk = dev_kappa
            report.best_epoch = epoch
            best_state = model.state_dict()
        report.epoch_seconds.append(time.perf_counter() - t0)
        log.info("epoch %d train_mse=%.5f dev_qwk=%.4f", epoch, train_mse, dev_kappa)
        if on_epoch is not None:
            on_epoch(epoch, train_mse, dev_kappa)
    model.load_state_dict(best_state)
    if test_set is not None and len(test_set):
        report.test_qwk = evaluate(model, test_set, scale).qwk
    return report, model
