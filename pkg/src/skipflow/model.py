"""SkipFlow LSTM: pair schedule, full forward pass and backpropagation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import layers
from .errors import ConfigurationError, DimensionError
from .numerics import ACTIVATIONS, ParamBlock

VARIANTS = ("tensor", "bilinear", "lstm-mean", "lstm-last")
BASELINES = ("lstm-mean", "lstm-last")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    max_len: int
    embed_dim: int = 50
    hidden_dim: int = 50
    delta: int = 50
    slices: int = 4
    dense_dim: int = 50
    start_index: int = 3
    variant: str = "tensor"
    activation: str = "tanh"

    def __post_init__(self):
        problems = []
        if self.variant not in VARIANTS:
            problems.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.activation not in ACTIVATIONS:
            problems.append(f"activation must be one of {sorted(ACTIVATIONS)}, got {self.activation!r}")
        for name in ("vocab_size", "max_len", "embed_dim", "hidden_dim", "dense_dim"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.delta < 1:
            problems.append(f"delta must be >= 1, got {self.delta}")
        if self.slices < 1:
            problems.append(f"slices must be >= 1, got {self.slices}")
        if not 0 < self.start_index < self.max_len:
            problems.append(f"start_index must satisfy 0 < i0 < max_len={self.max_len}, got {self.start_index}")
        if problems:
            raise ConfigurationError("; ".join(problems))

    @property
    def has_coherence(self) -> bool:
        return self.variant not in BASELINES

    def to_dict(self) -> dict:
        return asdict(self)


def pair_schedule(L: int, delta: int, start: int = 3) -> list[tuple[int, int]]:
    """Chained pairs (p, p + delta mod L) starting at ``start``.

    Pair count is ceil((L - start) / delta); wraparound may yield self-pairs.
    """
    if not 0 < start < L or delta < 1:
        raise ConfigurationError(f"invalid schedule parameters L={L}, delta={delta}, start={start}")
    n = math.ceil((L - start) / delta)
    pairs = []
    p = start
    for _ in range(n):
        q = (p + delta) % L
        pairs.append((p, q))
        p = q
    return pairs


def num_coherence_features(config: ModelConfig) -> int:
    if not config.has_coherence:
        return 0
    return math.ceil((config.max_len - config.start_index) / config.delta)


@dataclass
class ForwardCache:
    seq: layers.SequenceCache
    P: np.ndarray
    Q: np.ndarray
    coh: tuple | None
    dense: tuple
    out: tuple


class SkipFlowModel:
    """Parameters plus forward/backward for one :class:`ModelConfig`.

    Every coherence pair is scored with the same tensor (or bilinear)
    parameters. Hidden-state indices in the schedule address rows of the
    state matrix, i.e. the state after reading token ``p``.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, mean_target: float = 0.5):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.embedding = layers.EmbeddingTable.init(rng, c.vocab_size, c.embed_dim)
        self.lstm = layers.LstmParams.init(rng, c.embed_dim, c.hidden_dim)
        self.ntn = None
        self.bilinear = None
        if c.variant == "tensor":
            self.ntn = layers.NtnParams.init(rng, c.hidden_dim, c.slices)
        elif c.variant == "bilinear":
            self.bilinear = layers.BilinearParams.init(rng, c.hidden_dim)
        self.n_pairs = num_coherence_features(c)
        self.schedule = pair_schedule(c.max_len, c.delta, c.start_index) if c.has_coherence else []
        self.dense = layers.DenseParams.init(rng, c.hidden_dim + self.n_pairs, c.dense_dim, c.activation)
        self.output = layers.OutputParams.init(rng, c.dense_dim, mean_target)

    def blocks(self) -> list[ParamBlock]:
        out = self.embedding.blocks() + self.lstm.blocks()
        if self.ntn is not None:
            out += self.ntn.blocks()
        if self.bilinear is not None:
            out += self.bilinear.blocks()
        return out + self.dense.blocks() + self.output.blocks()

    def named_blocks(self) -> dict[str, ParamBlock]:
        return {p.name: p for p in self.blocks()}

    def zero_grad(self) -> None:
        for p in self.blocks():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.size for p in self.blocks())

    # ------------------------------------------------------------------

    def _coherence_forward(self, a, b):
        if self.ntn is not None:
            return layers.ntn_forward(a, b, self.ntn)
        return layers.bilinear_forward(a, b, self.bilinear)

    def _coherence_backward(self, ds, cache):
        if self.ntn is not None:
            return layers.ntn_backward(ds, cache, self.ntn)
        return layers.bilinear_backward(ds, cache, self.bilinear)

    def forward(self, ids, lengths):
        """Score a batch. Returns ``(y [B], s [B, n], cache)``."""
        ids = np.atleast_2d(np.asarray(ids))
        lengths = np.atleast_1d(np.asarray(lengths))
        if ids.shape[1] != self.config.max_len:
            raise DimensionError(f"essays padded to {ids.shape[1]} but model expects max_len={self.config.max_len}")
        pooling = "last" if self.config.variant == "lstm-last" else "mean"
        H, e, seq = layers.run_sequence(ids, lengths, self.embedding, self.lstm, pooling)
        P = np.array([p for p, _ in self.schedule], dtype=np.int64)
        Q = np.array([q for _, q in self.schedule], dtype=np.int64)
        if self.n_pairs:
            s, coh = self._coherence_forward(H[:, P], H[:, Q])
        else:
            s, coh = np.zeros((ids.shape[0], 0)), None
        h_out, dense = layers.dense_forward(e, s, self.dense)
        y, out = layers.output_forward(h_out, self.output)
        return y, s, ForwardCache(seq, P, Q, coh, dense, out)

    def backward(self, cache: ForwardCache, dy, corrupt: str | None = None) -> None:
        """Accumulate dL/dtheta into every block's ``grad`` given dL/dy [B].

        ``corrupt="ntn"`` (or ``"bilinear"``) flips the sign of the coherence
        scorer's gradients; it exists only as a negative control for the
        gradient checker.
        """
        dy = np.atleast_1d(np.asarray(dy, dtype=np.float64))
        dh_out = layers.output_backward(dy, cache.out, self.output)
        de, ds = layers.dense_backward(dh_out, cache.dense, self.dense)
        dH = np.zeros_like(cache.seq.H)
        if self.n_pairs:
            coh_blocks = (self.ntn or self.bilinear).blocks()
            before = [p.grad.copy() for p in coh_blocks] if corrupt else None
            da, db = self._coherence_backward(ds, cache.coh)
            if corrupt:
                for p, g0 in zip(coh_blocks, before):
                    p.grad[...] = g0 - (p.grad - g0)
            # chained pairs share states; add.at sums repeated indices
            np.add.at(dH, (slice(None), cache.P), da)
            np.add.at(dH, (slice(None), cache.Q), db)
        layers.run_sequence_backward(dH, de, cache.seq, self.embedding, self.lstm)

    def predict(self, ids, lengths, batch_size: int = 256) -> np.ndarray:
        ids = np.atleast_2d(np.asarray(ids))
        lengths = np.atleast_1d(np.asarray(lengths))
        out = [self.forward(ids[i : i + batch_size], lengths[i : i + batch_size])[0] for i in range(0, len(ids), batch_size)]
        return np.concatenate(out) if out else np.zeros(0)

    # ------------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.values.copy() for p in self.blocks()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        blocks = self.named_blocks()
        if set(blocks) != set(state):
            raise DimensionError(
                f"checkpoint blocks {sorted(set(state) ^ set(blocks))} do not match the model configuration"
            )
        for name, values in state.items():
            if blocks[name].shape != np.shape(values):
                raise DimensionError(f"{name}: checkpoint shape {np.shape(values)} != model shape {blocks[name].shape}")
            blocks[name].values[...] = values
