"""Dense single-precision tensor primitives.

Matrices are plain 2-D ``numpy.float32`` arrays in row-major (time-major)
layout; masks are boolean arrays where ``True`` means "may attend".
Projection weights are stored ``(in_dim, out_dim)`` so a linear layer is
``x @ w + b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import DimensionMismatch, EvenKernel, FullyMaskedRow

DTYPE = np.float32


def as_matrix(x) -> np.ndarray:
    m = np.ascontiguousarray(x, dtype=DTYPE)
    if m.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def _check_vector(v, n: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=DTYPE)
    if v.shape != (n,):
        raise DimensionMismatch(f"{name}: expected shape ({n},), got {v.shape}")
    return v


def _masked_softmax(scores: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    # softmax over the last axis; mask broadcasts against scores
    if mask is not None:
        if not mask.any(axis=-1).all():
            raise FullyMaskedRow("attention row with no allowed keys")
        scores = np.where(mask, scores, DTYPE(-np.inf))
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=-1, keepdims=True)).astype(DTYPE, copy=False)


def softmax_rows(m, mask=None) -> np.ndarray:
    """Row-wise softmax; disallowed entries of ``mask`` come out exactly 0."""
    m = as_matrix(m)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != m.shape:
            raise DimensionMismatch(f"mask shape {mask.shape} != matrix shape {m.shape}")
    return _masked_softmax(m, mask)


def log_softmax_rows(m) -> np.ndarray:
    m = as_matrix(m)
    shifted = m - m.max(axis=1, keepdims=True)
    return (shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))).astype(DTYPE)


def linear(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    if x.shape[-1] != w.shape[0]:
        raise DimensionMismatch(f"linear: input dim {x.shape[-1]} != weight rows {w.shape[0]}")
    y = x @ w
    if b is not None:
        y = y + b
    return y.astype(DTYPE, copy=False)


def swish(x: np.ndarray) -> np.ndarray:
    # x * sigmoid(x), written to avoid overflow in exp for large |x|
    return (x * (0.5 * (1.0 + np.tanh(0.5 * x)))).astype(DTYPE, copy=False)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, DTYPE(0))


def glu(x: np.ndarray) -> np.ndarray:
    a, g = np.split(x, 2, axis=-1)
    return (a * (0.5 * (1.0 + np.tanh(0.5 * g)))).astype(DTYPE, copy=False)


@dataclass(frozen=True)
class AttentionWeights:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray

    @classmethod
    def from_params(cls, params: Mapping[str, np.ndarray], prefix: str) -> "AttentionWeights":
        return cls(*(params[f"{prefix}.{n}"] for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")))

    @classmethod
    def identity(cls, dim: int) -> "AttentionWeights":
        eye = np.eye(dim, dtype=DTYPE)
        zero = np.zeros(dim, dtype=DTYPE)
        return cls(eye, zero, eye, zero, eye, zero, eye, zero)


def multi_head_attention(q, k, v, mask, heads: int, weights: AttentionWeights) -> np.ndarray:
    """Scaled dot-product attention with ``heads`` heads.

    ``mask`` has shape ``(len(q), len(k))`` or is ``None`` for all-allowed.
    """
    q, k, v = as_matrix(q), as_matrix(k), as_matrix(v)
    dim = weights.wq.shape[1]
    if dim % heads:
        raise DimensionMismatch(f"model dim {dim} not divisible by {heads} heads")
    if k.shape[0] != v.shape[0]:
        raise DimensionMismatch(f"key rows {k.shape[0]} != value rows {v.shape[0]}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q.shape[0], k.shape[0]):
            raise DimensionMismatch(f"mask shape {mask.shape} != {(q.shape[0], k.shape[0])}")
    d_head = dim // heads
    n, m = q.shape[0], k.shape[0]

    qh = linear(q, weights.wq, weights.bq).reshape(n, heads, d_head).transpose(1, 0, 2)
    kh = linear(k, weights.wk, weights.bk).reshape(m, heads, d_head).transpose(1, 0, 2)
    vh = linear(v, weights.wv, weights.bv).reshape(m, heads, d_head).transpose(1, 0, 2)

    scores = (qh @ kh.transpose(0, 2, 1)) * DTYPE(1.0 / np.sqrt(d_head))
    attn = _masked_softmax(scores, None if mask is None else mask[None])
    ctx = (attn @ vh).transpose(1, 0, 2).reshape(n, dim)
    return linear(ctx, weights.wo, weights.bo)


def layer_norm(x, gain, bias, epsilon: float = 1e-12) -> np.ndarray:
    """Per-row normalization; a zero-variance row collapses to ``bias``."""
    x = as_matrix(x)
    gain = _check_vector(gain, x.shape[1], "gain")
    bias = _check_vector(bias, x.shape[1], "bias")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    denom = np.sqrt(var + DTYPE(epsilon))
    with np.errstate(divide="ignore", invalid="ignore"):
        normed = np.where(denom > 0, centered / np.where(denom > 0, denom, 1), 0)
    return (normed * gain + bias).astype(DTYPE, copy=False)


def depthwise_conv1d(x, kernels, left_pad=None, right_zero_pad: Optional[int] = None) -> np.ndarray:
    """Per-channel K-tap convolution over time.

    ``kernels`` has shape ``(K, C)``. The sequence is extended with
    ``left_pad`` rows on the left (zeros when ``None``) and zero rows on the
    right so the output keeps the row count of ``x``.
    """
    x = as_matrix(x)
    kernels = as_matrix(kernels)
    width, channels = kernels.shape
    if width % 2 == 0:
        raise EvenKernel(f"kernel width {width} must be odd")
    if channels != x.shape[1]:
        raise DimensionMismatch(f"kernel channels {channels} != input channels {x.shape[1]}")
    half = (width - 1) // 2
    if right_zero_pad is None:
        right_zero_pad = half
    if left_pad is None:
        left_pad = np.zeros((half, channels), dtype=DTYPE)
    left_pad = as_matrix(left_pad)
    if left_pad.shape != (half, channels) or right_zero_pad != half:
        raise DimensionMismatch(
            f"padding must be {half} rows on each side, got left {left_pad.shape[0]}, right {right_zero_pad}"
        )
    rows = x.shape[0]
    padded = np.concatenate([left_pad, x, np.zeros((right_zero_pad, channels), dtype=DTYPE)])
    out = np.zeros_like(x)
    for tap in range(width):
        out += padded[tap : tap + rows] * kernels[tap]
    return out


def conv1d(x, w, b, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Dense temporal convolution; ``w`` has shape ``(K, in, out)``."""
    x = as_matrix(x)
    width, d_in, d_out = w.shape
    if d_in != x.shape[1]:
        raise DimensionMismatch(f"conv1d: input dim {x.shape[1]} != weight in-dim {d_in}")
    padded = np.concatenate(
        [np.zeros((pad, d_in), DTYPE), x, np.zeros((pad, d_in), DTYPE)]
    )
    n_out = (padded.shape[0] - width) // stride + 1
    out = np.zeros((n_out, d_out), dtype=DTYPE)
    for tap in range(width):
        out += padded[tap : tap + stride * (n_out - 1) + 1 : stride] @ w[tap]
    return out + b


@dataclass(frozen=True)
class FeedForwardWeights:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def from_params(cls, params: Mapping[str, np.ndarray], prefix: str) -> "FeedForwardWeights":
        return cls(*(params[f"{prefix}.{n}"] for n in ("w1", "b1", "w2", "b2")))


def feed_forward(
    x, weights: FeedForwardWeights, activation: Callable[[np.ndarray], np.ndarray] = swish
) -> np.ndarray:
    x = as_matrix(x)
    if weights.w2.shape[1] != x.shape[1]:
        raise DimensionMismatch("feed_forward output dim must equal input dim")
    return linear(activation(linear(x, weights.w1, weights.b1)), weights.w2, weights.b2)


def sinusoidal_positions(offset: int, length: int, dim: int) -> np.ndarray:
    """Absolute sinusoidal encodings for positions ``offset .. offset+length-1``."""
    pos = np.arange(offset, offset + length, dtype=np.float64)[:, None]
    i = np.arange(0, dim, 2, dtype=np.float64)
    div = np.exp(-np.log(10000.0) * i / dim)
    pe = np.zeros((length, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: dim // 2])
    return pe.astype(DTYPE)
