"""SkipFlow LSTM essay scoring, implemented with numpy."""

from .metrics import qwk, qwk_oracle, quadratic_weighted_kappa
from .model import ModelConfig, SkipFlowModel, num_coherence_features, pair_schedule
from .training import TrainConfig, TrainReport, evaluate, train

__all__ = [
    "ModelConfig",
    "SkipFlowModel",
    "TrainConfig",
    "TrainReport",
    "evaluate",
    "num_coherence_features",
    "pair_schedule",
    "qwk",
    "qwk_oracle",
    "quadratic_weighted_kappa",
    "train",
]
