"""Vocabulary, CTC posteriors, greedy frame labels and path collapse."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, VocabError
from .numerics import as_matrix, linear, log_softmax_rows

BLANK = "<blank>"
MASK = "<mask>"
UNK = "<unk>"


@dataclass(frozen=True)
class Vocab:
    tokens: Tuple[str, ...]

    def __post_init__(self):
        toks = tuple(self.tokens)
        object.__setattr__(self, "tokens", toks)
        if len(toks) < 2 or toks[0] != BLANK or toks[-1] != MASK:
            raise VocabError(f"vocabulary must start with {BLANK!r} and end with {MASK!r}")
        if len(set(toks)) != len(toks):
            raise VocabError("vocabulary tokens must be unique")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def blank_id(self) -> int:
        return 0

    @property
    def mask_id(self) -> int:
        return len(self.tokens) - 1

    @property
    def unk_id(self) -> Optional[int]:
        try:
            return self.tokens.index(UNK)
        except ValueError:
            return None

    def token(self, i: int) -> str:
        return self.tokens[i]

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.tokens[i] for i in ids]

    @classmethod
    def default(cls, size: int) -> "Vocab":
        """Placeholder vocabulary: blank, unk, t2..t{size-2}, mask."""
        if size < 3:
            raise VocabError("default vocabulary needs at least 3 entries")
        return cls((BLANK, UNK, *(f"t{i}" for i in range(2, size - 1)), MASK))

    @classmethod
    def parse(cls, text: str) -> "Vocab":
        lines = text.splitlines()
        while lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))

    def dumps(self) -> str:
        return "\n".join(self.tokens) + "\n"


def load_vocab(path) -> Vocab:
    try:
        with open(path, encoding="utf-8") as fh:
            return Vocab.parse(fh.read())
    except UnicodeDecodeError as exc:
        raise VocabError(f"vocabulary is not UTF-8: {exc}") from None


@dataclass(frozen=True)
class FrameLabels:
    token_ids: np.ndarray
    confidences: np.ndarray
    frame_indices: np.ndarray

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class TokenRun:
    token_id: int
    run_start: int
    run_end: int
    confidence: float = 1.0

    def __post_init__(self):
        if self.run_end <= self.run_start:
            raise ValueError(f"empty run [{self.run_start}, {self.run_end})")

    @property
    def center(self) -> int:
        # midpoint of the occupied frames, rounded down
        return (self.run_start + self.run_end - 1) // 2

    def shifted(self, offset: int) -> "TokenRun":
        return TokenRun(self.token_id, self.run_start + offset, self.run_end + offset, self.confidence)


def ctc_posteriors(h, params: Mapping[str, np.ndarray]) -> np.ndarray:
    """Frame-wise log-probabilities over the vocabulary."""
    hidden = as_matrix(getattr(h, "hidden", h))
    w, b = params["ctc.w"], params["ctc.b"]
    if w.shape[0] != hidden.shape[1]:
        raise DimensionMismatch(f"ctc projection expects dim {w.shape[0]}, got {hidden.shape[1]}")
    return log_softmax_rows(linear(hidden, w, b))


def greedy_labels(log_probs, frame_offset: int = 0) -> FrameLabels:
    lp = as_matrix(log_probs)
    # argmax takes the first maximum, i.e. the smallest token id on ties
    ids = lp.argmax(axis=1)
    conf = np.exp(lp[np.arange(len(ids)), ids].astype(np.float64))
    frames = np.arange(frame_offset, frame_offset + len(ids))
    return FrameLabels(ids.astype(np.int64), conf, frames)


def dedup_runs(labels: FrameLabels) -> List[TokenRun]:
    """Run-length encode frame labels; blank runs are kept."""
    runs: List[TokenRun] = []
    ids = labels.token_ids.tolist()
    conf = labels.confidences.tolist()
    frames = labels.frame_indices.tolist()
    start = 0
    for t in range(1, len(ids) + 1):
        if t == len(ids) or ids[t] != ids[start]:
            runs.append(TokenRun(int(ids[start]), frames[start], frames[t - 1] + 1, max(conf[start:t])))
            start = t
    return runs


def expand_runs(runs: Sequence[TokenRun]) -> List[int]:
    out: List[int] = []
    for r in runs:
        out.extend([r.token_id] * (r.run_end - r.run_start))
    return out


def normalize(runs: Sequence[TokenRun], blank_id: int = 0) -> List[TokenRun]:
    """Drop blank runs. Equal neighbours left behind are genuine repeats and stay."""
    return [r for r in runs if r.token_id != blank_id]


def collapse(ids: Sequence[int], blank_id: int = 0) -> List[int]:
    """Token ids of the collapsed CTC path."""
    labels = FrameLabels(np.asarray(ids, dtype=np.int64), np.ones(len(ids)), np.arange(len(ids)))
    return [r.token_id for r in normalize(dedup_runs(labels), blank_id)]
