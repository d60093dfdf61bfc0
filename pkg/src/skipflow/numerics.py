"""Dense kernels, activations, gradient clipping, Adam and a gradient checker.

Every kernel here works in float64 and comes as a forward/backward pair.
Vector arguments may carry arbitrary leading batch dimensions; parameter
gradients returned by the backward kernels are summed over those dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericalError

DTYPE = np.float64


@dataclass(eq=False)
class ParamBlock:
    """A named trainable array with its gradient accumulator."""

    name: str
    values: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.array(self.values, dtype=DTYPE)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def _check_matvec(M, x):
    if M.ndim != 2 or x.shape[-1:] != M.shape[1:]:
        raise DimensionError(f"matvec: matrix {M.shape} incompatible with vector {x.shape}")


def matvec(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    """y_i = sum_j M_ij x_j, applied over any leading dimensions of ``x``."""
    M = np.asarray(M, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    _check_matvec(M, x)
    return x @ M.T


def matvec_backward(M: np.ndarray, x: np.ndarray, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (dM, dx) for y = matvec(M, x) given dL/dy."""
    M = np.asarray(M, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    dy = np.asarray(dy, dtype=DTYPE)
    _check_matvec(M, x)
    if dy.shape != x.shape[:-1] + (M.shape[0],):
        raise DimensionError(f"matvec_backward: dy {dy.shape} does not match output of {M.shape} @ {x.shape}")
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy2.T @ x2, dy @ M


def _check_bilinear(a, M, b):
    n = a.shape[-1]
    if M.shape != (n, n) or b.shape != a.shape:
        raise DimensionError(f"bilinear_form: a {a.shape}, M {M.shape}, b {b.shape} do not conform")


def bilinear_form(a: np.ndarray, M: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a^T M b over the last axis; a scalar for plain vectors."""
    a, M, b = (np.asarray(v, dtype=DTYPE) for v in (a, M, b))
    _check_bilinear(a, M, b)
    return np.einsum("...i,ij,...j->...", a, M, b)


def bilinear_form_backward(a, M, b, dout) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (da, dM, db) for out = a^T M b."""
    a, M, b = (np.asarray(v, dtype=DTYPE) for v in (a, M, b))
    _check_bilinear(a, M, b)
    dout = np.asarray(dout, dtype=DTYPE)
    da = dout[..., None] * (b @ M.T)
    db = dout[..., None] * (a @ M)
    n = a.shape[-1]
    dM = (dout.reshape(-1, 1) * a.reshape(-1, n)).T @ b.reshape(-1, n)
    return da, dM, db


def sigmoid(x):
    """Logistic function via exp(-|x|), so the exponential never overflows."""
    x = np.asarray(x, dtype=DTYPE)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else out[()]


def sigmoid_backward(y, dy):
    """Gradient through sigmoid given its output ``y``."""
    return dy * y * (1.0 - y)


def tanh_act(x):
    return np.tanh(np.asarray(x, dtype=DTYPE))


def tanh_backward(y, dy):
    """Gradient through tanh given its output ``y``."""
    return dy * (1.0 - y * y)


def relu(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_backward(y, dy):
    return dy * (y > 0)


ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "tanh": (tanh_act, tanh_backward),
    "relu": (relu, relu_backward),
}


def global_norm(arrays: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(a * a)) for a in arrays))


def clip_global_norm(grads: Sequence[np.ndarray], c: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``c``.

    Returns the factor that was applied (1.0 when already under the bound).
    """
    if c <= 0:
        raise ValueError(f"clip norm must be positive, got {c}")
    g = global_norm(grads)
    if g <= c:
        return 1.0
    factor = c / g
    for a in grads:
        a *= factor
    return factor


@dataclass
class AdamState:
    """Moment estimates and hyperparameters for :func:`adam_step`."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[ParamBlock], state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place using ``p.grad``."""
    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p in params:
        if p.name not in state.m:
            state.m[p.name] = np.zeros_like(p.values)
            state.v[p.name] = np.zeros_like(p.values)
        m, v = state.m[p.name], state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (p.grad * p.grad)
        p.values -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict[str, float]
    checked: dict[str, int]

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "max_rel_error": self.worst,
            "blocks": [
                {"name": k, "max_rel_error": v, "coords_checked": self.checked[k]}
                for k, v in self.max_rel_error.items()
            ],
        }


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=DTYPE)
    n = np.asarray(numeric, dtype=DTYPE)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(
    loss_and_grad: Callable[[], float],
    params: Sequence[ParamBlock],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int = 200,
    sample: int = 50,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_and_grad`` must zero and refill every ``ParamBlock.grad`` and return
    the loss at the current parameter values. Blocks larger than
    ``max_coords`` are checked on ``sample`` coordinates drawn uniformly with
    a seeded generator.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    if sample < 25:
        raise ValueError("at least 25 coordinates per block are required")
    base = loss_and_grad()
    if not math.isfinite(base):
        raise NumericalError(f"grad_check: loss is not finite at the base point ({base})")
    analytic = {p.name: p.grad.copy() for p in params}
    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    checked: dict[str, int] = {}
    for p in params:
        flat = p.values.reshape(-1)
        if flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=sample, replace=False))
        else:
            coords = np.arange(flat.size)
        worst = 0.0
        g = analytic[p.name].reshape(-1)
        for i in coords:
            old = flat[i]
            flat[i] = old + h
            lp = loss_and_grad()
            flat[i] = old - h
            lm = loss_and_grad()
            flat[i] = old
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise NumericalError(f"grad_check: non-finite loss perturbing {p.name}[{i}]")
            numeric = (lp - lm) / (2.0 * h)
            worst = max(worst, float(relative_error(g[i], numeric)))
        errors[p.name] = worst
        checked[p.name] = int(len(coords))
    # leave the parameters' grads holding the analytic values
    loss_and_grad()
    return GradCheckReport(tolerance=tol, max_rel_error=errors, checked=checked)
