"""Mask-predict refinement of greedy CTC output.

Low-confidence tokens are replaced by ``<mask>`` and re-predicted by a
non-causal Transformer decoder that attends to the unmasked tokens and to
encoder memory. Each iteration commits the most confident predictions and
feeds them back as context for the next one.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .encoder import ParamSpec, attention_specs, ffn_specs, linear_specs, ln_specs
from .errors import ConfigError, DimensionMismatch
from .numerics import (
    DTYPE,
    AttentionWeights,
    FeedForwardWeights,
    as_matrix,
    feed_forward,
    layer_norm,
    linear,
    multi_head_attention,
    sinusoidal_positions,
    softmax_rows,
    swish,
)

Params = Mapping[str, np.ndarray]
LN_EPS = 1e-12


@dataclass(frozen=True)
class DecoderConfig:
    layers: int = 6
    heads: int = 4
    model_dim: int = 256
    ffn_dim: int = 2048

    def __post_init__(self):
        if self.layers < 1 or self.heads < 1 or self.ffn_dim < 1:
            raise ConfigError("decoder layers, heads and ffn_dim must be >= 1")
        if self.model_dim % self.heads or self.model_dim % 2:
            raise ConfigError(f"model_dim {self.model_dim} must be even and divisible by heads {self.heads}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MaskPredictConfig:
    threshold: float = 0.99
    iterations: int = 5

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")


@dataclass(frozen=True)
class MaskedSequence:
    token_ids: Tuple[int, ...]
    confidences: Tuple[float, ...]
    mask_id: int

    @property
    def masked_positions(self) -> List[int]:
        return [i for i, t in enumerate(self.token_ids) if t == self.mask_id]

    @property
    def num_masked(self) -> int:
        return sum(t == self.mask_id for t in self.token_ids)

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class MaskPredictResult:
    token_ids: List[int]
    refined: List[int] = field(default_factory=list)  # positions filled by the decoder
    passes: int = 0


def decoder_param_specs(cfg: DecoderConfig, vocab_size: int) -> Dict[str, ParamSpec]:
    d = cfg.model_dim
    s: Dict[str, ParamSpec] = {"dec.embed": ParamSpec((vocab_size, d), "embed")}
    for i in range(cfg.layers):
        p = f"dec.layers.{i}"
        s.update(ln_specs(f"{p}.ln_self", d))
        s.update(attention_specs(f"{p}.self", d))
        s.update(ln_specs(f"{p}.ln_src", d))
        s.update(attention_specs(f"{p}.src", d))
        s.update(ln_specs(f"{p}.ln_ff", d))
        s.update(ffn_specs(f"{p}.ff", d, cfg.ffn_dim))
    s.update(ln_specs("dec.ln_final", d))
    s.update(linear_specs("dec.out", d, vocab_size))
    return s


def mask_low_confidence(
    tokens: Sequence[Tuple[int, float]], cfg: MaskPredictConfig, mask_id: int
) -> MaskedSequence:
    ids, confs = [], []
    for tok, conf in tokens:
        ids.append(mask_id if conf < cfg.threshold else int(tok))
        confs.append(float(conf))
    return MaskedSequence(tuple(ids), tuple(confs), mask_id)


def _ln(x, params: Params, prefix: str):
    return layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"], LN_EPS)


def decoder_probs(token_ids: Sequence[int], memory, params: Params, cfg: DecoderConfig) -> np.ndarray:
    """Output distributions at every position of ``token_ids``."""
    mem = as_matrix(getattr(memory, "hidden", memory))
    if mem.shape[0] < 1:
        raise DimensionMismatch("decoder memory is empty")
    if mem.shape[1] != cfg.model_dim:
        raise DimensionMismatch(f"memory dim {mem.shape[1]} != decoder dim {cfg.model_dim}")
    embed = params["dec.embed"]
    ids = np.asarray(token_ids, dtype=np.int64)
    x = embed[ids] + sinusoidal_positions(0, len(ids), cfg.model_dim)
    for i in range(cfg.layers):
        p = f"dec.layers.{i}"
        h = _ln(x, params, f"{p}.ln_self")
        x = x + multi_head_attention(h, h, h, None, cfg.heads, AttentionWeights.from_params(params, f"{p}.self"))
        h = _ln(x, params, f"{p}.ln_src")
        x = x + multi_head_attention(h, mem, mem, None, cfg.heads, AttentionWeights.from_params(params, f"{p}.src"))
        x = x + feed_forward(_ln(x, params, f"{p}.ln_ff"), FeedForwardWeights.from_params(params, f"{p}.ff"), swish)
    x = _ln(x, params, "dec.ln_final")
    return softmax_rows(linear(x, params["dec.out.w"], params["dec.out.b"]))


def mlm_forward(seq: MaskedSequence, memory, params: Params, cfg: DecoderConfig) -> Tuple[List[int], np.ndarray]:
    """Distributions at the masked positions: ``(positions, probs[K, V])``."""
    if len(seq) < 1:
        raise DimensionMismatch("cannot decode an empty sequence")
    positions = seq.masked_positions
    vocab = params["dec.out.b"].shape[0]
    if not positions:
        return [], np.zeros((0, vocab), dtype=DTYPE)
    probs = decoder_probs(seq.token_ids, memory, params, cfg)
    return positions, probs[positions]


def fill_schedule(num_masked: int, iterations: int) -> List[int]:
    """How many masks each iteration commits.

    Iteration m fills ceil(remaining / iterations_left), so the first one
    fills ceil(K / N) and every one of the min(N, K) passes fills at least one.
    """
    counts = []
    remaining = num_masked
    for left in range(iterations, 0, -1):
        if remaining == 0:
            break
        k = math.ceil(remaining / left)
        counts.append(k)
        remaining -= k
    return counts


def mask_predict(
    seq: MaskedSequence,
    memory,
    params: Params,
    dec_cfg: DecoderConfig,
    cfg: MaskPredictConfig,
    excluded: Sequence[int] = (0,),
) -> MaskPredictResult:
    """Iteratively fill every masked position.

    ``excluded`` ids (blank by default; the mask id always) are never
    predicted.
    """
    ids = list(seq.token_ids)
    banned = sorted(set(excluded) | {seq.mask_id})
    refined: List[int] = []
    passes = 0
    for k in fill_schedule(seq.num_masked, cfg.iterations):
        current = MaskedSequence(tuple(ids), seq.confidences, seq.mask_id)
        positions, probs = mlm_forward(current, memory, params, dec_cfg)
        passes += 1
        probs = probs.astype(np.float64)
        probs[:, banned] = -1.0
        best = probs.argmax(axis=1)
        best_p = probs[np.arange(len(best)), best]
        order = sorted(range(len(positions)), key=lambda n: (-best_p[n], positions[n]))
        for n in order[:k]:
            ids[positions[n]] = int(best[n])
            refined.append(positions[n])
    return MaskPredictResult(ids, sorted(refined), passes)
