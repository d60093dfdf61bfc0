"""Essay ingestion: ASAP TSV loading, tokenization, vocabulary, encoding, folds.

Tokenized cache format (``.jsonl``): one JSON object per line with keys
``id`` (int), ``prompt`` (int), ``true_length`` (int), ``target`` (float in
[0, 1]) and ``ids`` (list of ``L`` ints, PAD=0, UNK=1).
"""

from __future__ import annotations

import csv
import json
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DataValidationError

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
VOCAB_CAP = 4000
NUM_FOLDS = 5

SYNTHETIC_PROMPT = 9


@dataclass(frozen=True)
class ScoreScale:
    min_score: int
    max_score: int

    def __post_init__(self):
        if not self.min_score < self.max_score:
            raise ConfigurationError(f"score scale needs min < max, got ({self.min_score}, {self.max_score})")


# ASAP prompt score ranges; prompt 9 is reserved for the synthetic corpus.
SCORE_SCALES: dict[int, ScoreScale] = {
    1: ScoreScale(2, 12),
    2: ScoreScale(1, 6),
    3: ScoreScale(0, 3),
    4: ScoreScale(0, 3),
    5: ScoreScale(0, 4),
    6: ScoreScale(0, 4),
    7: ScoreScale(0, 30),
    8: ScoreScale(0, 60),
    SYNTHETIC_PROMPT: ScoreScale(0, 10),
}

# ASAP average essay lengths, used to pick the default padded length.
AVG_LENGTHS = {1: 350, 2: 350, 3: 150, 4: 150, 5: 150, 6: 150, 7: 250, 8: 650}
SYNTHETIC_LENGTH = 80


def scale_for(prompt_id: int) -> ScoreScale:
    try:
        return SCORE_SCALES[prompt_id]
    except KeyError:
        raise ConfigurationError(f"unknown prompt {prompt_id}; known prompts: {sorted(SCORE_SCALES)}") from None


def default_max_len(prompt_id: int) -> int:
    """Average length rounded up to a multiple of 50."""
    if prompt_id == SYNTHETIC_PROMPT:
        return SYNTHETIC_LENGTH
    if prompt_id not in AVG_LENGTHS:
        raise ConfigurationError(f"no default length for prompt {prompt_id}")
    return int(math.ceil(AVG_LENGTHS[prompt_id] / 50) * 50)


@dataclass
class RawEssay:
    id: int
    prompt_id: int
    text: str
    score: int


@dataclass
class TokenizedEssay:
    id: int
    prompt_id: int
    token_ids: np.ndarray
    true_length: int
    target: float
    score: int


_PUNCT = re.compile(r'([.,!?;:"()])')


def tokenize(text: str) -> list[str]:
    """Lowercase, isolate . , ! ? ; : " ( ) as tokens, split on whitespace."""
    return _PUNCT.sub(r" \1 ", text.lower()).split()


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        self.id_to_token = [PAD_TOKEN, UNK_TOKEN, *tokens]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ConfigurationError("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __getitem__(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def words(self) -> list[str]:
        """Non-special tokens in id order (what :meth:`__init__` expects)."""
        return self.id_to_token[2:]


def build_vocab(train_corpus: Iterable[Sequence[str]], cap: int = VOCAB_CAP) -> Vocabulary:
    """Keep the ``cap`` most frequent tokens; ties break lexicographically.

    Pass only the training partition here.
    """
    counts = Counter(tok for doc in train_corpus for tok in doc)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([tok for tok, _ in ranked[:cap]])


def encode_pad(tokens: Sequence[str], vocab: Vocabulary, L: int) -> tuple[np.ndarray, int]:
    """Map to ids, truncate to ``L`` and right-pad with PAD."""
    if L < 1:
        raise ConfigurationError(f"max length must be >= 1, got {L}")
    ids = np.full(L, PAD, dtype=np.int64)
    kept = [vocab[t] for t in tokens[:L]]
    ids[: len(kept)] = kept
    return ids, len(kept)


def normalize_score(raw: int, scale: ScoreScale, prompt_id: int | None = None) -> float:
    if not scale.min_score <= raw <= scale.max_score:
        where = f" for prompt {prompt_id}" if prompt_id is not None else ""
        raise DataValidationError(f"score {raw} outside [{scale.min_score}, {scale.max_score}]{where}")
    return (raw - scale.min_score) / (scale.max_score - scale.min_score)


def denormalize_score(y, scale: ScoreScale):
    """Back to the integer scale: round half away from zero, then clamp.

    Accepts a scalar or an array.
    """
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, 1.0)
    raw = scale.min_score + y * (scale.max_score - scale.min_score)
    rounded = np.sign(raw) * np.floor(np.abs(raw) + 0.5)
    out = np.clip(rounded, scale.min_score, scale.max_score).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def tokenize_essays(essays: Sequence[RawEssay], vocab: Vocabulary, L: int) -> list[TokenizedEssay]:
    out = []
    for e in essays:
        scale = scale_for(e.prompt_id)
        ids, n = encode_pad(tokenize(e.text), vocab, L)
        out.append(TokenizedEssay(e.id, e.prompt_id, ids, n, normalize_score(e.score, scale, e.prompt_id), e.score))
    return out


@dataclass
class EncodedSet:
    """Column-stacked essays ready for batched forward passes."""

    essay_ids: np.ndarray
    prompt_id: int
    ids: np.ndarray
    lengths: np.ndarray
    targets: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.essay_ids)

    @classmethod
    def stack(cls, essays: Sequence[TokenizedEssay], prompt_id: int) -> "EncodedSet":
        if any(e.prompt_id != prompt_id for e in essays):
            raise ConfigurationError(f"essays from several prompts passed for prompt {prompt_id}")
        L = len(essays[0].token_ids) if essays else 1
        return cls(
            essay_ids=np.array([e.id for e in essays], dtype=np.int64),
            prompt_id=prompt_id,
            ids=np.stack([e.token_ids for e in essays]) if essays else np.zeros((0, L), dtype=np.int64),
            lengths=np.array([e.true_length for e in essays], dtype=np.int64),
            targets=np.array([e.target for e in essays], dtype=np.float64),
            scores=np.array([e.score for e in essays], dtype=np.int64),
        )

    def subset(self, idx) -> "EncodedSet":
        return EncodedSet(self.essay_ids[idx], self.prompt_id, self.ids[idx], self.lengths[idx], self.targets[idx], self.scores[idx])


@dataclass
class Fold:
    train: list[int]
    dev: list[int]
    test: list[int]


@dataclass
class FoldPlan:
    folds: list[Fold]
    seed: int


def split_folds(ids: Sequence[int], seed: int) -> FoldPlan:
    """Five 60/20/20 folds: test is slice f, dev is slice f+1 (mod 5)."""
    ids = list(ids)
    if len(ids) < NUM_FOLDS:
        raise ConfigurationError(f"need at least {NUM_FOLDS} essays for cross validation, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    slices = [[ids[i] for i in chunk] for chunk in np.array_split(order, NUM_FOLDS)]
    folds = []
    for f in range(NUM_FOLDS):
        dev_f = (f + 1) % NUM_FOLDS
        train = [i for g in range(NUM_FOLDS) if g not in (f, dev_f) for i in slices[g]]
        folds.append(Fold(train=train, dev=slices[dev_f], test=slices[f]))
    return FoldPlan(folds=folds, seed=seed)


REQUIRED_COLUMNS = ("essay_id", "essay_set", "essay", "domain1_score")


def load_asap_tsv(path, prompt_id: int | None = None) -> list[RawEssay]:
    """Read an ASAP-style TSV. Invalid bytes are replaced, not fatal.

    With ``prompt_id`` set, rows from other prompts are skipped before
    validation.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", errors="replace", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None:
            raise DataValidationError(f"{path}: empty file, expected a header row")
        header = [h.strip() for h in header]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DataValidationError(f"{path}: header lacks required columns {missing}")
        col = {c: header.index(c) for c in REQUIRED_COLUMNS}
        essays = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) <= max(col.values()):
                raise DataValidationError(f"{path}:{lineno}: expected at least {max(col.values()) + 1} fields, got {len(row)}")
            try:
                essay_id = int(row[col["essay_id"]])
                prompt = int(row[col["essay_set"]])
            except ValueError:
                raise DataValidationError(f"{path}:{lineno}: essay_id/essay_set must be integers") from None
            if prompt_id is not None and prompt != prompt_id:
                continue
            try:
                score = int(row[col["domain1_score"]])
            except ValueError:
                raise DataValidationError(f"{path}:{lineno}: unparsable score {row[col['domain1_score']]!r}") from None
            if prompt not in SCORE_SCALES:
                raise DataValidationError(f"{path}:{lineno}: unknown prompt {prompt}")
            scale = SCORE_SCALES[prompt]
            if not scale.min_score <= score <= scale.max_score:
                raise DataValidationError(
                    f"{path}:{lineno}: score {score} outside [{scale.min_score}, {scale.max_score}] for prompt {prompt}"
                )
            essays.append(RawEssay(essay_id, prompt, row[col["essay"]], score))
    if not essays:
        warnings.warn(f"{path}: no essays loaded", RuntimeWarning, stacklevel=2)
    return essays


def write_asap_tsv(essays: Sequence[RawEssay], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(REQUIRED_COLUMNS) + "\n")
        for e in essays:
            text = " ".join(e.text.split())
            fh.write(f"{e.id}\t{e.prompt_id}\t{text}\t{e.score}\n")


def write_token_cache(essays: Sequence[TokenizedEssay], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for e in essays:
            rec = {"id": e.id, "prompt": e.prompt_id, "true_length": e.true_length, "target": e.target, "ids": e.token_ids.tolist()}
            fh.write(json.dumps(rec) + "\n")


def read_token_cache(path) -> list[TokenizedEssay]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            scale = scale_for(rec["prompt"])
            score = int(round(scale.min_score + rec["target"] * (scale.max_score - scale.min_score)))
            out.append(
                TokenizedEssay(rec["id"], rec["prompt"], np.array(rec["ids"], dtype=np.int64), rec["true_length"], rec["target"], score)
            )
    return out


MARKER_A, MARKER_B = "zeta", "omega"
MAX_PAIRS = 10


def synth_coherence_dataset(
    n_essays: int, L: int, delta: int, vocab_size: int = 200, seed: int = 0, decoys: bool = True
) -> tuple[list[RawEssay], ScoreScale]:
    """Random essays scored by the number of marker pairs exactly ``delta`` apart.

    Each essay is ``L`` filler words ``w0..w{vocab_size-1}``. The score ``m``
    is drawn uniformly from 0..10 and ``m`` pairs (``zeta`` at p, ``omega`` at
    p + delta) are planted. With ``decoys`` the remaining ``10 - m`` pairs are
    planted at a separation drawn from 1..delta // 2, so every essay carries
    the same marker counts and only the separation carries the score. No
    placement may create an unplanned ``zeta ... omega`` pair at distance
    ``delta``.
    """
    if min(n_essays, L, delta, vocab_size) < 1:
        raise ConfigurationError("synthetic dataset parameters must be positive")
    if 4 * MAX_PAIRS > L - delta:
        raise ConfigurationError(f"L={L} too short to plant {MAX_PAIRS} pairs at separation {delta}")
    rng = np.random.default_rng(seed)
    essays = []
    for i in range(n_essays):
        m = int(rng.integers(0, MAX_PAIRS + 1))
        words = [f"w{j}" for j in rng.integers(0, vocab_size, size=L)]
        gaps = [delta] * m
        if decoys:
            gaps += [int(g) for g in rng.integers(1, max(delta // 2, 1) + 1, size=MAX_PAIRS - m)]
        _plant(words, gaps, delta, rng)
        essays.append(RawEssay(i + 1, SYNTHETIC_PROMPT, " ".join(words), m))
    return essays, SCORE_SCALES[SYNTHETIC_PROMPT]


def count_marker_pairs(words: Sequence[str], delta: int) -> int:
    return sum(1 for p in range(len(words) - delta) if words[p] == MARKER_A and words[p + delta] == MARKER_B)


def _plant(words: list[str], gaps: list[int], delta: int, rng: np.random.Generator) -> None:
    L = len(words)
    tokens: dict[int, str] = {}
    want = 0
    for gap in gaps:
        want += gap == delta
        while True:
            p = int(rng.integers(0, L - gap))
            if p in tokens or p + gap in tokens:
                continue
            trial = dict(tokens)
            trial[p], trial[p + gap] = MARKER_A, MARKER_B
            got = sum(1 for q, t in trial.items() if t == MARKER_A and trial.get(q + delta) == MARKER_B)
            if got == want:
                tokens = trial
                break
    for q, t in tokens.items():
        words[q] = t
