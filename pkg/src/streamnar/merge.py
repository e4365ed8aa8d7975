"""Overlap decoding with dynamic mapping.

Consecutive blocks overlap by half a block. Each block hypothesis is split
at the run nearest its center frame; the part of the current block before
that run is aligned (minimum edit distance on token ids) against the part
of the previous block from its split run onwards, and for every aligned
pair the token sitting closer to the center of its own block survives.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

from .ctc import TokenRun, normalize
from .errors import EmptyHypothesis, FormatError, NonConsecutiveBlocks, PositionOutOfBlock

GAP = None


@dataclass(frozen=True)
class BlockHypothesis:
    """Deduplicated runs of one block, in block-local encoder frames."""

    block_index: int
    runs: Tuple[TokenRun, ...]
    block_len: int
    is_last: bool = False

    def __post_init__(self):
        object.__setattr__(self, "runs", tuple(self.runs))
        prev = -1
        for r in self.runs:
            if r.run_start < 0 or r.run_end > self.block_len:
                raise PositionOutOfBlock(f"run [{r.run_start}, {r.run_end}) outside block of {self.block_len}")
            if r.center <= prev:
                raise FormatError("run positions must be strictly increasing")
            prev = r.center

    @property
    def stride(self) -> int:
        return self.block_len // 2

    def global_frame(self, run: TokenRun) -> int:
        return self.block_index * self.stride + run.center

    @classmethod
    def from_json(cls, obj: dict, is_last: bool = False) -> "BlockHypothesis":
        try:
            runs = tuple(
                TokenRun(int(r["id"]), int(r["start"]), int(r["end"]), float(r.get("conf", 1.0)))
                for r in obj["runs"]
            )
            return cls(int(obj["b"]), runs, int(obj["l"]), is_last)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad block hypothesis record: {exc}") from None

    def to_json(self) -> dict:
        return {
            "b": self.block_index,
            "l": self.block_len,
            "runs": [
                {"id": r.token_id, "start": r.run_start, "end": r.run_end, "conf": r.confidence}
                for r in self.runs
            ],
        }


@dataclass(frozen=True)
class MergedToken:
    token_id: int
    emit_block: int
    confidence: float
    frame: int  # global encoder frame of the run center


@dataclass(frozen=True)
class MergedTranscript:
    tokens: Tuple[MergedToken, ...] = ()
    finalized_upto: int = -1

    @property
    def token_ids(self) -> List[int]:
        return [t.token_id for t in self.tokens]


AlignmentPath = List[Tuple[Optional[TokenRun], Optional[TokenRun]]]


def score(run: Optional[TokenRun], block_len: int) -> float:
    """Center preference of a run inside its own block; gaps score -inf."""
    if run is GAP:
        return -math.inf
    j = run.center
    if not 0 <= j < block_len:
        raise PositionOutOfBlock(f"position {j} outside block of length {block_len}")
    return -abs(j - (block_len - 1) / 2)


def center_index(h: BlockHypothesis) -> int:
    if not h.runs:
        raise EmptyHypothesis(f"block {h.block_index} has no runs")
    target = h.block_len / 2
    best = 0
    for i, r in enumerate(h.runs):
        if abs(r.center - target) < abs(h.runs[best].center - target):
            best = i
    return best


def split(h: BlockHypothesis) -> Tuple[Tuple[TokenRun, ...], Tuple[TokenRun, ...]]:
    """(runs before the center run, center run and everything after)."""
    if not h.runs:
        return (), ()
    idx = center_index(h)
    return h.runs[:idx], h.runs[idx:]


def align(a: Sequence[TokenRun], b: Sequence[TokenRun]) -> AlignmentPath:
    """Minimum edit-distance alignment on token ids.

    Traceback prefers a diagonal step (match or substitution), then
    consuming ``a`` alone, then consuming ``b`` alone.
    """
    n, m = len(a), len(b)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][0] = i
    for j in range(m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        ai = a[i - 1].token_id
        row, up = dist[i], dist[i - 1]
        for j in range(1, m + 1):
            sub = up[j - 1] + (ai != b[j - 1].token_id)
            row[j] = min(sub, up[j] + 1, row[j - 1] + 1)
    path: AlignmentPath = []
    i, j = n, m
    while i or j:
        here = dist[i][j]
        if i and j and dist[i - 1][j - 1] + (a[i - 1].token_id != b[j - 1].token_id) == here:
            path.append((a[i - 1], b[j - 1]))
            i, j = i - 1, j - 1
        elif i and dist[i - 1][j] + 1 == here:
            path.append((a[i - 1], GAP))
            i -= 1
        else:
            path.append((GAP, b[j - 1]))
            j -= 1
    path.reverse()
    return path


def select(path: AlignmentPath, block_len: int) -> List[Tuple[TokenRun, str]]:
    """Pick one member of every pair; returns (run, "p" | "q").

    ``p`` runs belong to the current block and ``q`` runs to the previous
    one; each is scored in its own block's coordinates and ties go to ``q``.
    """
    out = []
    for p, q in path:
        if score(p, block_len) > score(q, block_len):
            out.append((p, "p"))
        else:
            out.append((q, "q"))
    return out


def _emit(transcript: MergedTranscript, items: Iterable[Tuple[TokenRun, BlockHypothesis]], block: int):
    new = [
        MergedToken(r.token_id, block, r.confidence, h.global_frame(r))
        for r, h in items
    ]
    return MergedTranscript(transcript.tokens + tuple(new), block)


def merge_step(
    prev: Optional[BlockHypothesis],
    cur: BlockHypothesis,
    transcript: MergedTranscript,
    blank_id: int = 0,
) -> MergedTranscript:
    """Fold block ``cur`` into the running transcript.

    The first block emits the runs before its center run. Later blocks
    reconcile the overlap with ``prev`` and emit the merged region. The
    tail of ``cur`` stays pending until the next step or :func:`flush`.
    """
    if prev is None:
        if cur.block_index != 0:
            raise NonConsecutiveBlocks(f"first block has index {cur.block_index}")
        head, _ = split(cur)
        return _emit(transcript, ((r, cur) for r in normalize(head, blank_id)), cur.block_index)
    if cur.block_index != prev.block_index + 1:
        raise NonConsecutiveBlocks(f"block {cur.block_index} follows block {prev.block_index}")
    if cur.block_len != prev.block_len:
        raise NonConsecutiveBlocks("block length changed mid-stream")
    head, _ = split(cur)
    _, tail = split(prev)
    chosen = select(align(head, tail), cur.block_len)
    items = [(r, cur if side == "p" else prev) for r, side in chosen if r.token_id != blank_id]
    return _emit(transcript, items, cur.block_index)


def flush(last: BlockHypothesis, transcript: MergedTranscript, blank_id: int = 0) -> MergedTranscript:
    """Emit the pending tail of the final block."""
    _, tail = split(last)
    return _emit(transcript, ((r, last) for r in normalize(tail, blank_id)), last.block_index)


def merge_hypotheses(blocks: Sequence[BlockHypothesis], blank_id: int = 0) -> MergedTranscript:
    transcript = MergedTranscript()
    prev = None
    for h in blocks:
        transcript = merge_step(prev, h, transcript, blank_id)
        prev = h
    if prev is not None:
        transcript = flush(prev, transcript, blank_id)
    return transcript


def read_hypotheses(lines: Iterable[str]) -> List[BlockHypothesis]:
    out = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"line {n}: {exc}") from None
        if not isinstance(obj, dict):
            raise FormatError(f"line {n}: expected a JSON object")
        out.append(BlockHypothesis.from_json(obj))
    return out
