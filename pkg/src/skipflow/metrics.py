"""Quadratic weighted kappa over a declared integer rating scale."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataValidationError


@dataclass(frozen=True)
class RatingPair:
    rater_a: np.ndarray
    rater_b: np.ndarray
    min_rating: int
    max_rating: int

    def __post_init__(self):
        a = np.asarray(self.rater_a)
        b = np.asarray(self.rater_b)
        if a.ndim != 1 or a.shape != b.shape or a.size == 0:
            raise DataValidationError(f"rating vectors must be 1-d, non-empty and equal length; got {a.shape}, {b.shape}")
        if self.max_rating - self.min_rating < 1:
            raise ConfigurationError(
                f"degenerate rating scale [{self.min_rating}, {self.max_rating}]: kappa needs at least two categories"
            )
        for r in (a, b):
            if np.any(r != np.round(r)):
                raise DataValidationError("ratings must be integers")
            if r.min() < self.min_rating or r.max() > self.max_rating:
                raise DataValidationError(
                    f"ratings outside [{self.min_rating}, {self.max_rating}]: observed [{r.min()}, {r.max()}]"
                )
        object.__setattr__(self, "rater_a", a.astype(np.int64))
        object.__setattr__(self, "rater_b", b.astype(np.int64))

    @property
    def num_categories(self) -> int:
        return self.max_rating - self.min_rating + 1


def qwk(pair: RatingPair) -> float:
    """Quadratic weighted kappa.

    The histograms span the declared scale, so unobserved categories still
    contribute to the weight and expectation matrices. When both raters are
    constant and identical the expected disagreement is zero; that case
    returns 1.0 with a warning.
    """
    n = pair.num_categories
    a = pair.rater_a - pair.min_rating
    b = pair.rater_b - pair.min_rating
    observed = np.bincount(a * n + b, minlength=n * n).reshape(n, n).astype(np.float64)
    hist_a = observed.sum(axis=1)
    hist_b = observed.sum(axis=0)
    expected = np.outer(hist_a, hist_b) / observed.sum()
    idx = np.arange(n)
    weights = (idx[:, None] - idx[None, :]) ** 2 / (n - 1) ** 2
    den = float(np.sum(weights * expected))
    if den == 0.0:
        warnings.warn("qwk: both raters constant and identical; returning 1.0", RuntimeWarning, stacklevel=2)
        return 1.0
    return 1.0 - float(np.sum(weights * observed)) / den


def qwk_oracle(pair: RatingPair) -> float:
    """Direct summation over the rating grid; used to cross-check :func:`qwk`."""
    lo, hi = pair.min_rating, pair.max_rating
    cats = list(range(lo, hi + 1))
    total = len(pair.rater_a)
    count_a = {c: 0 for c in cats}
    count_b = {c: 0 for c in cats}
    joint = {(i, j): 0 for i in cats for j in cats}
    for x, y in zip(pair.rater_a.tolist(), pair.rater_b.tolist()):
        count_a[x] += 1
        count_b[y] += 1
        joint[(x, y)] += 1
    span = (hi - lo) ** 2
    num = 0.0
    den = 0.0
    for i in cats:
        for j in cats:
            w = (i - j) ** 2 / span
            num += w * joint[(i, j)]
            den += w * count_a[i] * count_b[j] / total
    if den == 0.0:
        warnings.warn("qwk_oracle: both raters constant and identical; returning 1.0", RuntimeWarning, stacklevel=2)
        return 1.0
    return 1.0 - num / den


def quadratic_weighted_kappa(rater_a, rater_b, min_rating: int, max_rating: int) -> float:
    return qwk(RatingPair(np.asarray(rater_a), np.asarray(rater_b), min_rating, max_rating))
