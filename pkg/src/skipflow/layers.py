"""Differentiable layers of the SkipFlow network.

Each layer is a ``*_forward`` / ``*_backward`` pair. Forward functions return
``(output, cache)``; backward functions take the upstream gradient and the
cache, accumulate parameter gradients into the ``ParamBlock.grad`` arrays and
return gradients with respect to the layer inputs. Inputs may carry leading
batch dimensions.

LSTM gates are kept as separate blocks per gate (input ``i``, forget ``f``,
output ``o``, candidate ``g``) and stacked in that order for computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numerics import (
    ACTIVATIONS,
    DTYPE,
    ParamBlock,
    bilinear_form,
    bilinear_form_backward,
    matvec,
    matvec_backward,
    sigmoid,
    sigmoid_backward,
    tanh_backward,
)
from .text import PAD

GATES = ("i", "f", "o", "g")


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


# --------------------------------------------------------------------------
# parameter containers


@dataclass(eq=False)
class EmbeddingTable:
    W_e: ParamBlock

    @classmethod
    def init(cls, rng, vocab_size: int, dim: int) -> "EmbeddingTable":
        W = glorot(rng, (vocab_size, dim), vocab_size, dim)
        W[PAD] = 0.0
        return cls(ParamBlock("embedding.W_e", W))

    def blocks(self) -> list[ParamBlock]:
        return [self.W_e]


@dataclass(eq=False)
class LstmParams:
    """W_* act on the input [d x N_emb], U_* on the previous hidden state [d x d]."""

    W: dict[str, ParamBlock]
    U: dict[str, ParamBlock]
    b: dict[str, ParamBlock]

    @classmethod
    def init(cls, rng, input_dim: int, hidden_dim: int, forget_bias: float = 1.0) -> "LstmParams":
        W, U, b = {}, {}, {}
        for g in GATES:
            W[g] = ParamBlock(f"lstm.W_{g}", glorot(rng, (hidden_dim, input_dim), input_dim, hidden_dim))
            U[g] = ParamBlock(f"lstm.U_{g}", glorot(rng, (hidden_dim, hidden_dim), hidden_dim, hidden_dim))
            b[g] = ParamBlock(f"lstm.b_{g}", np.full(hidden_dim, forget_bias if g == "f" else 0.0))
        return cls(W, U, b)

    @property
    def hidden_dim(self) -> int:
        return self.b["i"].shape[0]

    def blocks(self) -> list[ParamBlock]:
        return [self.W[g] for g in GATES] + [self.U[g] for g in GATES] + [self.b[g] for g in GATES]

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.concatenate([self.W[g].values for g in GATES]),
            np.concatenate([self.U[g].values for g in GATES]),
            np.concatenate([self.b[g].values for g in GATES]),
        )

    def accumulate(self, dW: np.ndarray, dU: np.ndarray, db: np.ndarray) -> None:
        d = self.hidden_dim
        for n, g in enumerate(GATES):
            sl = slice(n * d, (n + 1) * d)
            self.W[g].grad += dW[sl]
            self.U[g].grad += dU[sl]
            self.b[g].grad += db[sl]


@dataclass(eq=False)
class NtnParams:
    M: ParamBlock  # [d, d, k]
    V: ParamBlock  # [k, 2d]
    b: ParamBlock  # [k]
    u: ParamBlock  # [k]

    @classmethod
    def init(cls, rng, d: int, k: int) -> "NtnParams":
        if k < 1:
            raise DimensionError(f"tensor needs at least one slice, got k={k}")
        return cls(
            M=ParamBlock("ntn.M", glorot(rng, (d, d, k), d, d)),
            V=ParamBlock("ntn.V", glorot(rng, (k, 2 * d), 2 * d, k)),
            b=ParamBlock("ntn.b", np.zeros(k)),
            u=ParamBlock("ntn.u", glorot(rng, (k,), k, 1)),
        )

    @property
    def k(self) -> int:
        return self.M.shape[2]

    def blocks(self) -> list[ParamBlock]:
        return [self.M, self.V, self.b, self.u]


@dataclass(eq=False)
class BilinearParams:
    M: ParamBlock  # [d, d]

    @classmethod
    def init(cls, rng, d: int) -> "BilinearParams":
        return cls(M=ParamBlock("bilinear.M", glorot(rng, (d, d), d, d)))

    def blocks(self) -> list[ParamBlock]:
        return [self.M]


@dataclass(eq=False)
class DenseParams:
    W_h: ParamBlock  # [H, d + n]
    b_h: ParamBlock  # [H]
    activation: str = "tanh"

    @classmethod
    def init(cls, rng, in_dim: int, out_dim: int, activation: str = "tanh") -> "DenseParams":
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; choose from {sorted(ACTIVATIONS)}")
        return cls(
            W_h=ParamBlock("dense.W_h", glorot(rng, (out_dim, in_dim), in_dim, out_dim)),
            b_h=ParamBlock("dense.b_h", np.zeros(out_dim)),
            activation=activation,
        )

    def blocks(self) -> list[ParamBlock]:
        return [self.W_h, self.b_h]


@dataclass(eq=False)
class OutputParams:
    W_f: ParamBlock  # [H]
    b_f: ParamBlock  # scalar

    @classmethod
    def init(cls, rng, in_dim: int, mean_target: float = 0.5) -> "OutputParams":
        m = float(np.clip(mean_target, 1e-6, 1 - 1e-6))
        return cls(
            W_f=ParamBlock("output.W_f", glorot(rng, (in_dim,), in_dim, 1)),
            b_f=ParamBlock("output.b_f", np.array(np.log(m / (1 - m)))),
        )

    def blocks(self) -> list[ParamBlock]:
        return [self.W_f, self.b_f]


# --------------------------------------------------------------------------
# embedding


def embed_forward(ids: np.ndarray, table: EmbeddingTable) -> np.ndarray:
    """Row lookup; PAD positions always produce zero vectors."""
    ids = np.asarray(ids)
    V = table.W_e.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"token id out of range [0, {V}): observed [{ids.min()}, {ids.max()}]")
    X = table.W_e.values[ids]
    X[ids == PAD] = 0.0
    return X


def embed_backward(ids: np.ndarray, dX: np.ndarray, table: EmbeddingTable) -> None:
    ids = np.asarray(ids).reshape(-1)
    dX = dX.reshape(-1, dX.shape[-1])
    keep = ids != PAD
    np.add.at(table.W_e.grad, ids[keep], dX[keep])


# --------------------------------------------------------------------------
# LSTM


def _lstm_gates(pre: np.ndarray, d: int):
    ifo = sigmoid(pre[..., : 3 * d])
    g = np.tanh(pre[..., 3 * d :])
    return ifo[..., :d], ifo[..., d : 2 * d], ifo[..., 2 * d :], g


def _lstm_gate_grads(dh, dc, c_prev, i, f, o, g, tc):
    """Gradient w.r.t. the stacked gate pre-activations and c_prev."""
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    dpre = np.concatenate(
        [sigmoid_backward(i, di), sigmoid_backward(f, df), sigmoid_backward(o, do), tanh_backward(g, dg)], axis=-1
    )
    return dpre, dc * f


def lstm_step(x, h_prev, c_prev, params: LstmParams):
    """One LSTM step. Returns ``((h, c), cache)``."""
    W, U, b = params.stacked()
    d = params.hidden_dim
    if x.shape[-1] != W.shape[1] or h_prev.shape[-1] != d or c_prev.shape != h_prev.shape:
        raise DimensionError(f"lstm_step: x {x.shape}, h {h_prev.shape}, c {c_prev.shape} vs hidden {d}")
    pre = matvec(W, x) + matvec(U, h_prev) + b
    i, f, o, g = _lstm_gates(pre, d)
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return (h, c), (x, h_prev, c_prev, i, f, o, g, tc)


def lstm_step_backward(dh, dc, cache, params: LstmParams):
    """Backward through one step; returns ``(dx, dh_prev, dc_prev)``."""
    x, h_prev, c_prev, i, f, o, g, tc = cache
    W, U, _ = params.stacked()
    dpre, dc_prev = _lstm_gate_grads(dh, dc, c_prev, i, f, o, g, tc)
    dW, dx = matvec_backward(W, x, dpre)
    dU, dh_prev = matvec_backward(U, h_prev, dpre)
    params.accumulate(dW, dU, dpre.reshape(-1, dpre.shape[-1]).sum(axis=0))
    return dx, dh_prev, dc_prev


@dataclass
class SequenceCache:
    ids: np.ndarray
    X: np.ndarray
    H: np.ndarray
    C: np.ndarray
    gates: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    TC: np.ndarray
    lengths: np.ndarray
    pooling: str
    W: np.ndarray
    U: np.ndarray


def run_sequence(ids, lengths, table: EmbeddingTable, lstm: LstmParams, pooling: str = "mean"):
    """Embed ``ids`` [B, L] and run the LSTM from a zero state.

    Returns ``(H, e, cache)`` with ``H`` [B, L, d] the hidden state after each
    token and ``e`` [B, d] the essay vector: the mean of the first
    ``lengths`` states (``pooling="mean"``) or the state at the last real
    token (``pooling="last"``). Essays of length zero pool to the zero vector.
    """
    ids = np.atleast_2d(np.asarray(ids))
    lengths = np.atleast_1d(np.asarray(lengths, dtype=np.int64))
    B, L = ids.shape
    if L < 1:
        raise DimensionError("sequence length must be >= 1")
    if lengths.shape != (B,):
        raise DimensionError(f"lengths {lengths.shape} do not match batch {B}")
    lengths = np.clip(lengths, 0, L)
    X = embed_forward(ids, table)
    W, U, b = lstm.stacked()
    d = lstm.hidden_dim
    XW = X @ W.T + b  # input projections for every step at once
    H = np.empty((B, L, d))
    C = np.empty((B, L, d))
    I, F, O, G = (np.empty((B, L, d)) for _ in range(4))
    h = np.zeros((B, d))
    c = np.zeros((B, d))
    for t in range(L):
        pre = XW[:, t] + h @ U.T
        i, f, o, g = _lstm_gates(pre, d)
        c = f * c + i * g
        h = o * np.tanh(c)
        H[:, t], C[:, t] = h, c
        I[:, t], F[:, t], O[:, t], G[:, t] = i, f, o, g
    TC = np.tanh(C)
    e = _pool(H, lengths, pooling)
    cache = SequenceCache(ids, X, H, C, (I, F, O, G), TC, lengths, pooling, W, U)
    return H, e, cache


def _pool(H, lengths, pooling):
    B, L, d = H.shape
    if pooling == "mean":
        mask = np.arange(L)[None, :] < lengths[:, None]
        denom = np.maximum(lengths, 1)[:, None]
        return (H * mask[..., None]).sum(axis=1) / denom
    if pooling == "last":
        e = H[np.arange(B), np.maximum(lengths - 1, 0)]
        return e * (lengths > 0)[:, None]
    raise ValueError(f"unknown pooling {pooling!r}")


def run_sequence_backward(dH, de, cache: SequenceCache, table: EmbeddingTable, lstm: LstmParams) -> None:
    """Backpropagate ``dH`` (direct grads on each state) and ``de`` through time."""
    H, C, TC = cache.H, cache.C, cache.TC
    I, F, O, G = cache.gates
    B, L, d = H.shape
    lengths = cache.lengths
    dH = np.array(dH, dtype=DTYPE, copy=True) if dH is not None else np.zeros_like(H)
    if cache.pooling == "mean":
        mask = (np.arange(L)[None, :] < lengths[:, None]).astype(DTYPE)
        dH += (mask / np.maximum(lengths, 1)[:, None])[..., None] * de[:, None, :]
    else:
        rows = np.nonzero(lengths > 0)[0]
        dH[rows, lengths[rows] - 1] += de[rows]
    dPre = np.empty((B, L, 4 * d))
    dh_next = np.zeros((B, d))
    dc_next = np.zeros((B, d))
    zeros = np.zeros((B, d))
    for t in range(L - 1, -1, -1):
        c_prev = C[:, t - 1] if t > 0 else zeros
        dpre, dc_next = _lstm_gate_grads(dH[:, t] + dh_next, dc_next, c_prev, I[:, t], F[:, t], O[:, t], G[:, t], TC[:, t])
        dPre[:, t] = dpre
        dh_next = dpre @ cache.U
    H_prev = np.concatenate([np.zeros((B, 1, d)), H[:, :-1]], axis=1)
    flat = dPre.reshape(-1, 4 * d)
    lstm.accumulate(flat.T @ cache.X.reshape(-1, cache.X.shape[-1]), flat.T @ H_prev.reshape(-1, d), flat.sum(axis=0))
    embed_backward(cache.ids, dPre @ cache.W, table)


# --------------------------------------------------------------------------
# coherence scorers


def ntn_forward(a, b, params: NtnParams):
    """s = sigmoid(u . tanh(a^T M_j b + V [a; b] + bias)), one scalar per pair."""
    M, V, bias, u = params.M.values, params.V.values, params.b.values, params.u.values
    d, _, k = M.shape
    if a.shape[-1] != d or b.shape != a.shape:
        raise DimensionError(f"ntn: a {a.shape}, b {b.shape} vs tensor {M.shape}")
    ab = np.concatenate([a, b], axis=-1)
    aM = (a @ M.reshape(d, d * k)).reshape(a.shape[:-1] + (d, k))  # a^T M_j for every slice
    z = np.sum(aM * b[..., None], axis=-2)
    t = np.tanh(z + matvec(V, ab) + bias)
    s = sigmoid(t @ u)
    return s, (a, b, ab, aM, t, s)


def ntn_backward(ds, cache, params: NtnParams):
    """Returns ``(da, db)``; parameter grads summed over all pairs."""
    a, b, ab, aM, t, s = cache
    M, V, u = params.M.values, params.V.values, params.u.values
    d, _, k = M.shape
    dr = sigmoid_backward(s, ds)
    params.u.grad += dr.reshape(-1) @ t.reshape(-1, k)
    dpre = tanh_backward(t, dr[..., None] * u)
    params.b.grad += dpre.reshape(-1, k).sum(axis=0)
    dV, dab = matvec_backward(V, ab, dpre)
    params.V.grad += dV
    outer = (b[..., :, None] * dpre[..., None, :]).reshape(-1, d * k)  # b_j * dpre_k
    params.M.grad += (a.reshape(-1, d).T @ outer).reshape(d, d, k)
    da = dab[..., :d] + (outer @ M.reshape(d, d * k).T).reshape(a.shape)
    db = dab[..., d:] + np.sum(aM * dpre[..., None, :], axis=-1)
    return da, db


def bilinear_forward(a, b, params: BilinearParams):
    s = sigmoid(bilinear_form(a, params.M.values, b))
    return s, (a, b, s)


def bilinear_backward(ds, cache, params: BilinearParams):
    a, b, s = cache
    dz = sigmoid_backward(s, ds)
    da, dM, db = bilinear_form_backward(a, params.M.values, b, dz)
    params.M.grad += dM
    return da, db


def ntn_score(a, b, params: NtnParams) -> float:
    return ntn_forward(np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE), params)[0]


def bilinear_score(a, b, params: BilinearParams) -> float:
    return bilinear_forward(np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE), params)[0]


# --------------------------------------------------------------------------
# dense hidden and output layers


def dense_forward(e, s, params: DenseParams):
    """h_out = f(W_h [e, s]) + b_h  (bias added after the nonlinearity)."""
    x = np.concatenate([e, s], axis=-1)
    if x.shape[-1] != params.W_h.shape[1]:
        raise DimensionError(f"dense: input width {x.shape[-1]} != W_h columns {params.W_h.shape[1]}")
    act, _ = ACTIVATIONS[params.activation]
    fa = act(matvec(params.W_h.values, x))
    return fa + params.b_h.values, (x, fa, e.shape[-1])


def dense_backward(dh, cache, params: DenseParams):
    x, fa, d = cache
    _, act_back = ACTIVATIONS[params.activation]
    params.b_h.grad += dh.reshape(-1, dh.shape[-1]).sum(axis=0)
    da = act_back(fa, dh)
    dW, dx = matvec_backward(params.W_h.values, x, da)
    params.W_h.grad += dW
    return dx[..., :d], dx[..., d:]


def output_forward(h, params: OutputParams):
    """y = sigmoid(W_f . h + b_f)."""
    y = sigmoid(h @ params.W_f.values + params.b_f.values)
    return y, (h, y)


def output_backward(dy, cache, params: OutputParams):
    h, y = cache
    dz = sigmoid_backward(y, dy)
    params.W_f.grad += np.reshape(dz, -1) @ h.reshape(-1, h.shape[-1])
    params.b_f.grad += np.sum(dz)
    return dz[..., None] * params.W_f.values


def dense_hidden(e, s, params: DenseParams):
    return dense_forward(np.asarray(e, dtype=DTYPE), np.asarray(s, dtype=DTYPE), params)[0]


def output_score(h, params: OutputParams):
    return output_forward(np.asarray(h, dtype=DTYPE), params)[0]
