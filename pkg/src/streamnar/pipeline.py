"""Decode sessions, latency/RTF metrics and the benchmark harness.

Streaming latency is measured against a simulated real-time feed: a block
becomes available at the audio time of its nominal end (the zero padding
of the final block stands for audio that keeps arriving after speech
ends), work on it starts once both it and the previous block's work are
done, and a token's emission time is the simulated clock when its block
finishes. End of speech is the end of the feature stream.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import ModelCheckpoint
from .ctc import Vocab, ctc_posteriors, dedup_runs, greedy_labels, normalize
from .encoder import EncoderState, encode_block, encode_full, subsample
from .errors import ConfigError, EmptyBatch, NonConsecutiveBlocks
from .frontend import FeatureMatrix, RawBlock, block_stream, check_block_len
from .merge import BlockHypothesis, MergedTranscript, flush, merge_step
from .mlm import MaskPredictConfig, mask_low_confidence, mask_predict
from .numerics import DTYPE

log = logging.getLogger(__name__)

SUBSAMPLING = 4
MODES = ("full_context", "streaming")


def block_ms_to_frames(block_ms: float, frame_shift_ms: float = 10.0) -> int:
    frames = block_ms / frame_shift_ms
    if abs(frames - round(frames)) > 1e-6:
        raise ConfigError(f"{block_ms} ms is not a whole number of {frame_shift_ms} ms frames")
    return int(round(frames))


@dataclass(frozen=True)
class SessionConfig:
    mode: str = "streaming"
    raw_block_len: int = 64
    mask_predict: MaskPredictConfig = field(default_factory=MaskPredictConfig)
    timestamps: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        check_block_len(self.raw_block_len)
        if self.raw_block_len % (2 * SUBSAMPLING):
            raise ConfigError(f"raw block length {self.raw_block_len} must be a multiple of 8")

    @property
    def block_len(self) -> int:
        """Encoder frames per block."""
        return self.raw_block_len // SUBSAMPLING


@dataclass
class Metrics:
    last_token_emitted_at: float
    end_of_speech_at: float
    audio_duration_ms: float
    compute_ms: float
    replay: bool = False  # full-context decoding measured offline

    @property
    def latency_ms(self) -> float:
        return self.last_token_emitted_at - self.end_of_speech_at

    @property
    def rtf(self) -> float:
        if self.audio_duration_ms <= 0:
            raise EmptyBatch("zero-length audio has no real-time factor")
        return self.compute_ms / self.audio_duration_ms


@dataclass(frozen=True)
class EmittedToken:
    token: str
    token_id: int
    emit_time: float  # ms
    source: str  # "ctc" | "mlm_refined"
    block_index: int


@dataclass(frozen=True)
class RtfSummary:
    utterances: int
    mean_latency_ms: float
    rtf: float
    total_compute_ms: float
    total_audio_ms: float


def measure_rtf(metrics: Sequence[Metrics]) -> RtfSummary:
    if not metrics:
        raise EmptyBatch("no utterances to summarize")
    audio = sum(m.audio_duration_ms for m in metrics)
    if audio <= 0:
        raise EmptyBatch("total audio duration is zero")
    compute = sum(m.compute_ms for m in metrics)
    mean_latency = sum(m.latency_ms for m in metrics) / len(metrics)
    return RtfSummary(len(metrics), mean_latency, compute / audio, compute, audio)


def _vocab_for(model: ModelCheckpoint, vocab: Optional[Vocab]) -> Vocab:
    if vocab is None:
        return Vocab.default(model.vocab_size)
    if vocab.size != model.vocab_size:
        raise ConfigError(f"vocabulary has {vocab.size} entries, model expects {model.vocab_size}")
    return vocab


def refine(tokens: Sequence[Tuple[int, float]], memory, model: ModelCheckpoint, cfg: MaskPredictConfig, vocab: Vocab):
    """Mask low-confidence tokens and re-predict them; returns (ids, refined positions)."""
    if not tokens:
        return [], []
    seq = mask_low_confidence(tokens, cfg, vocab.mask_id)
    result = mask_predict(seq, memory, model.tensors, model.decoder, cfg, excluded=(vocab.blank_id,))
    return result.token_ids, result.refined


def _pad_rows(values: np.ndarray, multiple: int) -> np.ndarray:
    extra = (-values.shape[0]) % multiple
    if not extra:
        return values
    return np.concatenate([values, np.zeros((extra, values.shape[1]), DTYPE)])


def decode_full(
    features: FeatureMatrix,
    model: ModelCheckpoint,
    session: SessionConfig,
    vocab: Optional[Vocab] = None,
) -> Tuple[List[EmittedToken], Metrics]:
    """Whole-utterance decoding: encode, greedy CTC, then mask-predict."""
    if session.mode != "full_context":
        raise ConfigError("decode_full needs a full_context session")
    vocab = _vocab_for(model, vocab)
    cfg = model.encoder
    params = model.tensors
    t0 = time.perf_counter()
    if cfg.attention == "block_band":
        # subsample per non-overlapping block so no block reads another's raw frames
        raw_len = cfg.block_len * SUBSAMPLING
        values = _pad_rows(features.values, raw_len)
        x = np.concatenate([subsample(values[s : s + raw_len], cfg, params) for s in range(0, len(values), raw_len)])
    else:
        x = subsample(_pad_rows(features.values, SUBSAMPLING), cfg, params)
    enc = encode_full(x, cfg, params, cfg.attention)
    runs = normalize(dedup_runs(greedy_labels(ctc_posteriors(enc, params))), vocab.blank_id)
    ids, refined = refine([(r.token_id, r.confidence) for r in runs], enc, model, session.mask_predict, vocab)
    elapsed = (time.perf_counter() - t0) * 1000.0
    eos = features.duration_ms
    refined_set = set(refined)
    tokens = [
        EmittedToken(vocab.token(t), t, eos + elapsed, "mlm_refined" if i in refined_set else "ctc", 0)
        for i, t in enumerate(ids)
    ]
    return tokens, Metrics(eos + elapsed, eos, eos, elapsed, replay=True)


class StreamingDecoder:
    """Stateful block-by-block decoder for one utterance.

    Feed :class:`RawBlock` objects in order with :meth:`feed`; each call
    returns the tokens finalized by that block. The block flagged
    ``is_last`` also flushes the pending tail.
    """

    def __init__(
        self,
        model: ModelCheckpoint,
        session: SessionConfig,
        vocab: Optional[Vocab] = None,
        frame_shift_ms: float = 10.0,
    ):
        if session.mode != "streaming":
            raise ConfigError("StreamingDecoder needs a streaming session")
        self.model = model.with_block_len(session.block_len)
        self.session = session
        self.vocab = _vocab_for(model, vocab)
        self.frame_shift_ms = frame_shift_ms
        self.state = EncoderState.fresh(self.model.encoder)
        self.transcript = MergedTranscript()
        self.prev_hyp: Optional[BlockHypothesis] = None
        self.prev_hidden: Optional[np.ndarray] = None
        self.clock_ms = 0.0
        self.compute_ms = 0.0
        self.end_frame = 0
        self.tokens: List[EmittedToken] = []
        self.finished = False

    @property
    def next_index(self) -> int:
        return 0 if self.prev_hyp is None else self.prev_hyp.block_index + 1

    def feed(self, block: RawBlock) -> List[EmittedToken]:
        if self.finished:
            raise NonConsecutiveBlocks("stream already finished")
        if block.index != self.next_index:
            raise NonConsecutiveBlocks(f"expected block {self.next_index}, got {block.index}")
        cfg = self.model.encoder
        params = self.model.tensors
        l = cfg.block_len
        start = time.perf_counter()

        x = subsample(block, cfg, params)
        out, self.state = encode_block(x, self.state, cfg, params, frame_offset=block.index * (l // 2))
        runs = dedup_runs(greedy_labels(ctc_posteriors(out, params)))
        hyp = BlockHypothesis(block.index, runs, l, block.is_last)
        before = len(self.transcript.tokens)
        self.transcript = merge_step(self.prev_hyp, hyp, self.transcript, self.vocab.blank_id)
        if block.is_last:
            self.transcript = flush(hyp, self.transcript, self.vocab.blank_id)
        segment = self.transcript.tokens[before:]
        memory = out.hidden if self.prev_hidden is None else np.concatenate([self.prev_hidden, out.hidden])
        ids, refined = refine(
            [(t.token_id, t.confidence) for t in segment], memory, self.model, self.session.mask_predict, self.vocab
        )

        compute = (time.perf_counter() - start) * 1000.0
        # a block is complete once all of its frames (padding included) have arrived
        available = (block.start_frame + len(block.values)) * self.frame_shift_ms
        self.clock_ms = max(available, self.clock_ms) + compute
        self.compute_ms += compute
        self.end_frame = block.end_frame
        self.prev_hyp, self.prev_hidden = hyp, out.hidden
        refined_set = set(refined)
        emitted = [
            EmittedToken(
                self.vocab.token(t), t, self.clock_ms, "mlm_refined" if i in refined_set else "ctc", block.index
            )
            for i, t in enumerate(ids)
        ]
        self.tokens.extend(emitted)
        if block.is_last:
            self.finished = True
        return emitted

    def finish(self) -> List[EmittedToken]:
        """Flush a stream whose final block was not flagged ``is_last``."""
        if self.finished or self.prev_hyp is None:
            self.finished = True
            return []
        start = time.perf_counter()
        before = len(self.transcript.tokens)
        self.transcript = flush(self.prev_hyp, self.transcript, self.vocab.blank_id)
        segment = self.transcript.tokens[before:]
        ids, refined = refine(
            [(t.token_id, t.confidence) for t in segment],
            self.prev_hidden,
            self.model,
            self.session.mask_predict,
            self.vocab,
        )
        compute = (time.perf_counter() - start) * 1000.0
        self.clock_ms += compute
        self.compute_ms += compute
        refined_set = set(refined)
        emitted = [
            EmittedToken(self.vocab.token(t), t, self.clock_ms, "mlm_refined" if i in refined_set else "ctc",
                         self.prev_hyp.block_index)
            for i, t in enumerate(ids)
        ]
        self.tokens.extend(emitted)
        self.finished = True
        return emitted

    def metrics(self) -> Metrics:
        eos = self.end_frame * self.frame_shift_ms
        last = self.tokens[-1].emit_time if self.tokens else self.clock_ms
        return Metrics(last, eos, eos, self.compute_ms)


def decode_streaming(
    blocks: Iterable[RawBlock],
    model: ModelCheckpoint,
    session: SessionConfig,
    vocab: Optional[Vocab] = None,
    frame_shift_ms: float = 10.0,
    feed_delay_s: float = 0.0,
) -> Tuple[List[EmittedToken], Metrics]:
    """Run a whole block stream through a :class:`StreamingDecoder`.

    ``feed_delay_s`` sleeps before each block to emulate a slow producer;
    it changes timings only.
    """
    decoder = StreamingDecoder(model, session, vocab, frame_shift_ms)
    for block in blocks:
        if feed_delay_s:
            time.sleep(feed_delay_s)
        decoder.feed(block)
    decoder.finish()
    return decoder.tokens, decoder.metrics()


def decode(
    features: FeatureMatrix, model: ModelCheckpoint, session: SessionConfig, vocab: Optional[Vocab] = None
) -> Tuple[List[EmittedToken], Metrics]:
    if session.mode == "full_context":
        return decode_full(features, model, session, vocab)
    blocks = block_stream(features, session.raw_block_len)
    return decode_streaming(blocks, model, session, vocab, features.frame_shift_ms)


@dataclass(frozen=True)
class BenchRecord:
    utt: str
    block_ms: float
    latency_ms: float
    rtf: float
    tokens: List[str]
    metrics: Metrics = field(repr=False)

    def to_json(self) -> dict:
        return {
            "utt": self.utt,
            "block_ms": self.block_ms,
            "latency_ms": round(self.latency_ms, 3),
            "rtf": round(self.rtf, 6),
            "tokens": self.tokens,
        }


def bench(
    model: ModelCheckpoint,
    utterances: Dict[str, FeatureMatrix],
    block_ms: Sequence[float],
    mask_cfg: Optional[MaskPredictConfig] = None,
    vocab: Optional[Vocab] = None,
    repeats: int = 1,
) -> Tuple[List[BenchRecord], Dict[float, RtfSummary]]:
    """Streaming latency/RTF sweep over block lengths.

    With ``repeats > 1`` each utterance is decoded several times and the
    fastest run is kept, which suppresses scheduler noise.
    """
    if not utterances:
        raise EmptyBatch("no utterances to benchmark")
    mask_cfg = mask_cfg or MaskPredictConfig()
    records: List[BenchRecord] = []
    summaries: Dict[float, RtfSummary] = {}
    for ms in block_ms:
        per_block = []
        for name, feats in utterances.items():
            raw_len = block_ms_to_frames(ms, feats.frame_shift_ms)
            session = SessionConfig("streaming", raw_len, mask_cfg)
            runs = [decode(feats, model, session, vocab) for _ in range(max(1, repeats))]
            tokens, m = min(runs, key=lambda r: r[1].compute_ms)
            rec = BenchRecord(name, ms, m.latency_ms, m.rtf, [t.token for t in tokens], m)
            records.append(rec)
            per_block.append(m)
            log.info("utt=%s block=%sms latency=%.1fms rtf=%.4f", name, ms, m.latency_ms, m.rtf)
        summaries[ms] = measure_rtf(per_block)
    return records, summaries


def format_bench_table(summaries: Dict[float, RtfSummary]) -> str:
    lines = [
        "# latency: last token emitted - end of feature stream (simulated real-time feed, machine-local)",
        f"{'block_ms':>9} {'utts':>5} {'latency_ms':>11} {'rtf':>8}",
    ]
    for ms, s in summaries.items():
        lines.append(f"{ms:>9g} {s.utterances:>5d} {s.mean_latency_ms:>11.2f} {s.rtf:>8.4f}")
    return "\n".join(lines)
