"""Blockwise-attention encoder (Transformer and Conformer variants).

Each block of ``block_len`` encoder frames attends to itself and to the
previous block at every layer. Streaming inference carries the previous
block's per-layer inputs in an :class:`EncoderState`; :func:`encode_full`
computes the same thing for a whole sequence with a banded attention mask
and serves as the reference for the streaming path.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Dict, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatch,
    NotDivisibleBy4,
    NotDivisibleByBlock,
    StateConfigMismatch,
)
from .numerics import (
    DTYPE,
    AttentionWeights,
    FeedForwardWeights,
    as_matrix,
    conv1d,
    depthwise_conv1d,
    feed_forward,
    glu,
    layer_norm,
    linear,
    multi_head_attention,
    relu,
    sinusoidal_positions,
    swish,
)

Params = Mapping[str, np.ndarray]

VARIANTS = ("transformer", "conformer")
ATTENTION_MODES = ("block_band", "full")
LN_EPS = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 83
    layers: int = 12
    heads: int = 4
    model_dim: int = 256
    ffn_dim: int = 2048
    variant: str = "conformer"
    conv_kernel: int = 15
    block_len: int = 16
    # attention pattern used for full-context decoding
    attention: str = "block_band"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown encoder variant {self.variant!r}")
        if self.attention not in ATTENTION_MODES:
            raise ConfigError(f"unknown attention mode {self.attention!r}")
        if self.layers < 1 or self.heads < 1 or self.input_dim < 1 or self.ffn_dim < 1:
            raise ConfigError("layers, heads, input_dim and ffn_dim must be >= 1")
        if self.model_dim % self.heads or self.model_dim % 2:
            raise ConfigError(f"model_dim {self.model_dim} must be even and divisible by heads {self.heads}")
        if self.conv_kernel % 2 == 0 or self.conv_kernel < 1:
            raise ConfigError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if self.block_len < 2 or self.block_len % 2:
            raise ConfigError(f"block_len must be even and >= 2, got {self.block_len}")

    @property
    def conv_context(self) -> int:
        return (self.conv_kernel - 1) // 2

    def to_dict(self) -> dict:
        return asdict(self)

    def with_block_len(self, block_len: int) -> "EncoderConfig":
        return replace(self, block_len=block_len)


class ParamSpec(NamedTuple):
    shape: Tuple[int, ...]
    init: str  # "fanin" | "ones" | "zeros" | "embed"
    fan_in: int = 1


def ln_specs(prefix: str, dim: int) -> Dict[str, ParamSpec]:
    return {f"{prefix}.g": ParamSpec((dim,), "ones"), f"{prefix}.b": ParamSpec((dim,), "zeros")}


def linear_specs(prefix: str, d_in: int, d_out: int, w="w", b="b") -> Dict[str, ParamSpec]:
    return {
        f"{prefix}.{w}": ParamSpec((d_in, d_out), "fanin", d_in),
        f"{prefix}.{b}": ParamSpec((d_out,), "fanin", d_in),
    }


def attention_specs(prefix: str, dim: int) -> Dict[str, ParamSpec]:
    out = {}
    for n in "qkvo":
        out.update(linear_specs(prefix, dim, dim, f"w{n}", f"b{n}"))
    return out


def ffn_specs(prefix: str, dim: int, inner: int) -> Dict[str, ParamSpec]:
    return {**linear_specs(prefix, dim, inner, "w1", "b1"), **linear_specs(prefix, inner, dim, "w2", "b2")}


def encoder_param_specs(cfg: EncoderConfig) -> Dict[str, ParamSpec]:
    d = cfg.model_dim
    s: Dict[str, ParamSpec] = {
        "enc.sub.conv1.w": ParamSpec((3, cfg.input_dim, d), "fanin", 3 * cfg.input_dim),
        "enc.sub.conv1.b": ParamSpec((d,), "fanin", 3 * cfg.input_dim),
        "enc.sub.conv2.w": ParamSpec((3, d, d), "fanin", 3 * d),
        "enc.sub.conv2.b": ParamSpec((d,), "fanin", 3 * d),
    }
    s.update(linear_specs("enc.sub.proj", d, d))
    for i in range(cfg.layers):
        p = f"enc.layers.{i}"
        if cfg.variant == "transformer":
            s.update(ln_specs(f"{p}.ln_att", d))
            s.update(attention_specs(f"{p}.att", d))
            s.update(ln_specs(f"{p}.ln_ff", d))
            s.update(ffn_specs(f"{p}.ff", d, cfg.ffn_dim))
        else:
            s.update(ln_specs(f"{p}.ln_ff1", d))
            s.update(ffn_specs(f"{p}.ff1", d, cfg.ffn_dim))
            s.update(ln_specs(f"{p}.ln_att", d))
            s.update(attention_specs(f"{p}.att", d))
            s.update(ln_specs(f"{p}.ln_conv", d))
            s.update(linear_specs(f"{p}.conv.pw1", d, 2 * d))
            s[f"{p}.conv.dw.w"] = ParamSpec((cfg.conv_kernel, d), "fanin", cfg.conv_kernel)
            s[f"{p}.conv.dw.b"] = ParamSpec((d,), "fanin", cfg.conv_kernel)
            s[f"{p}.conv.bn.scale"] = ParamSpec((d,), "ones")
            s[f"{p}.conv.bn.bias"] = ParamSpec((d,), "zeros")
            s.update(linear_specs(f"{p}.conv.pw2", d, d))
            s.update(ln_specs(f"{p}.ln_ff2", d))
            s.update(ffn_specs(f"{p}.ff2", d, cfg.ffn_dim))
            s.update(ln_specs(f"{p}.ln_out", d))
    s.update(ln_specs("enc.ln_final", d))
    return s


@dataclass(frozen=True)
class EncoderOutput:
    hidden: np.ndarray
    frame_offset: int = 0

    @property
    def frames(self) -> int:
        return self.hidden.shape[0]


@dataclass(frozen=True)
class EncoderState:
    """Previous-block context for streaming encoding.

    ``layer_inputs[i]`` holds the previous block's input to layer ``i``
    (entry 0 is the positional-encoded subsampled input and the last entry
    the top layer's output). Attention keys and the Conformer convolution's
    left padding are both computed from these rows, so nothing else needs
    caching.
    """

    block_index: int
    layer_inputs: Tuple[np.ndarray, ...]

    @classmethod
    def fresh(cls, cfg: EncoderConfig) -> "EncoderState":
        zeros = np.zeros((cfg.block_len, cfg.model_dim), dtype=DTYPE)
        return cls(0, tuple(zeros for _ in range(cfg.layers + 1)))

    def check(self, cfg: EncoderConfig) -> None:
        shape = (cfg.block_len, cfg.model_dim)
        if len(self.layer_inputs) != cfg.layers + 1 or any(z.shape != shape for z in self.layer_inputs):
            raise StateConfigMismatch("encoder state cache does not match the config")


def subsample(raw, cfg: EncoderConfig, params: Params) -> np.ndarray:
    """Two stride-2 convolutions then a projection: T frames -> T/4 frames."""
    values = getattr(raw, "values", raw)
    x = as_matrix(values)
    if x.shape[0] % 4:
        raise NotDivisibleBy4(f"{x.shape[0]} frames is not divisible by 4")
    if x.shape[1] != cfg.input_dim:
        raise DimensionMismatch(f"feature dim {x.shape[1]} != encoder input_dim {cfg.input_dim}")
    h = relu(conv1d(x, params["enc.sub.conv1.w"], params["enc.sub.conv1.b"], stride=2, pad=1))
    h = relu(conv1d(h, params["enc.sub.conv2.w"], params["enc.sub.conv2.b"], stride=2, pad=1))
    return linear(h, params["enc.sub.proj.w"], params["enc.sub.proj.b"])


def _ln(x, params: Params, prefix: str) -> np.ndarray:
    return layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"], LN_EPS)


def _ffn(x, params: Params, ln: str, ff: str) -> np.ndarray:
    return feed_forward(_ln(x, params, ln), FeedForwardWeights.from_params(params, ff), swish)


def _attention(queries, keys, mask, params: Params, p: str, heads: int) -> np.ndarray:
    """Pre-norm attention; ``queries`` rows are the trailing rows of ``keys``."""
    normed = _ln(keys, params, f"{p}.ln_att")
    q = normed[keys.shape[0] - queries.shape[0] :]
    return multi_head_attention(q, normed, normed, mask, heads, AttentionWeights.from_params(params, f"{p}.att"))


def _conv_input(x, params: Params, p: str) -> np.ndarray:
    h = _ln(x, params, f"{p}.ln_conv")
    return glu(linear(h, params[f"{p}.conv.pw1.w"], params[f"{p}.conv.pw1.b"]))


def _conv_output(dw, params: Params, p: str) -> np.ndarray:
    h = (dw + params[f"{p}.conv.dw.b"]) * params[f"{p}.conv.bn.scale"] + params[f"{p}.conv.bn.bias"]
    return linear(swish(h), params[f"{p}.conv.pw2.w"], params[f"{p}.conv.pw2.b"])


def trailing_rows(h: np.ndarray, count: int) -> np.ndarray:
    """Last ``count`` rows of ``h``, zero-filled on the left if ``h`` is shorter."""
    tail = h[max(0, h.shape[0] - count) :]
    if tail.shape[0] < count:
        tail = np.concatenate([np.zeros((count - tail.shape[0], h.shape[1]), DTYPE), tail])
    return tail


def blockwise_depthwise_conv(block: np.ndarray, prev_rows: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Depthwise convolution over one block: previous-block rows on the left, zeros on the right."""
    half = (kernels.shape[0] - 1) // 2
    return depthwise_conv1d(block, kernels, trailing_rows(prev_rows, half), half)


def _layer_on_block(x, prev, params: Params, i: int, cfg: EncoderConfig) -> np.ndarray:
    """One encoder layer over a single block, given the previous block's input to it."""
    p = f"enc.layers.{i}"
    if cfg.variant == "transformer":
        x = x + _attention(x, np.concatenate([prev, x]), None, params, p, cfg.heads)
        return x + _ffn(x, params, f"{p}.ln_ff", f"{p}.ff")
    both = np.concatenate([prev, x])
    both = both + DTYPE(0.5) * _ffn(both, params, f"{p}.ln_ff1", f"{p}.ff1")
    x = both[prev.shape[0] :]
    x = x + _attention(x, both, None, params, p, cfg.heads)
    # left padding comes from the previous block's layer input, not from its
    # post-attention state, so each layer reaches back exactly one block
    left = _conv_input(prev, params, p)
    dw = blockwise_depthwise_conv(_conv_input(x, params, p), left, params[f"{p}.conv.dw.w"])
    x = x + _conv_output(dw, params, p)
    x = x + DTYPE(0.5) * _ffn(x, params, f"{p}.ln_ff2", f"{p}.ff2")
    return _ln(x, params, f"{p}.ln_out")


def encode_block(
    x,
    state: EncoderState,
    cfg: EncoderConfig,
    params: Params,
    frame_offset: Optional[int] = None,
) -> Tuple[EncoderOutput, EncoderState]:
    """Encode one block of subsampled frames against the cached previous block.

    ``frame_offset`` is the global encoder-frame index of the block's first
    row (used for positional encoding); it defaults to non-overlapping
    blocks, ``block_index * block_len``.
    """
    x = as_matrix(x)
    if x.shape != (cfg.block_len, cfg.model_dim):
        raise DimensionMismatch(f"block shape {x.shape} != {(cfg.block_len, cfg.model_dim)}")
    state.check(cfg)
    if frame_offset is None:
        frame_offset = state.block_index * cfg.block_len
    z = x + sinusoidal_positions(frame_offset, cfg.block_len, cfg.model_dim)
    inputs = [z]
    for i in range(cfg.layers):
        z = _layer_on_block(z, state.layer_inputs[i], params, i, cfg)
        inputs.append(z)
    hidden = _ln(z, params, "enc.ln_final")
    new_state = EncoderState(state.block_index + 1, tuple(inputs))
    return EncoderOutput(hidden, frame_offset), new_state


def block_band_mask(frames: int, block_len: int, with_zero_block: bool = True) -> np.ndarray:
    """Visibility mask: a query in block b sees keys of blocks b-1 and b.

    With ``with_zero_block`` the key axis is prefixed by one all-zero
    virtual block standing in for block -1.
    """
    q_block = np.arange(frames) // block_len
    offset = block_len if with_zero_block else 0
    k_block = (np.arange(frames + offset) - offset) // block_len
    diff = q_block[:, None] - k_block[None, :]
    return (diff == 0) | (diff == 1)


def encode_full(x, cfg: EncoderConfig, params: Params, mode: str = "block_band") -> EncoderOutput:
    """Whole-sequence encoding.

    ``mode="block_band"`` reproduces chained :func:`encode_block` with one
    masked pass; ``mode="full"`` lets every frame attend to every frame.
    """
    x = as_matrix(x)
    if mode not in ATTENTION_MODES:
        raise ConfigError(f"unknown attention mode {mode!r}")
    frames, dim = x.shape
    if dim != cfg.model_dim:
        raise DimensionMismatch(f"model dim {dim} != {cfg.model_dim}")
    l = cfg.block_len
    if mode == "block_band" and frames % l:
        raise NotDivisibleByBlock(f"{frames} frames is not divisible by block_len {l}")
    z = x + sinusoidal_positions(0, frames, dim)
    band = block_band_mask(frames, l) if mode == "block_band" else None
    zero_block = np.zeros((l, dim), DTYPE)
    for i in range(cfg.layers):
        p = f"enc.layers.{i}"
        keys = np.concatenate([zero_block, z]) if band is not None else z
        if cfg.variant == "transformer":
            z = z + _attention(z, keys, band, params, p, cfg.heads)
            z = z + _ffn(z, params, f"{p}.ln_ff", f"{p}.ff")
            continue
        layer_in = keys
        keys = keys + DTYPE(0.5) * _ffn(keys, params, f"{p}.ln_ff1", f"{p}.ff1")
        z = keys[keys.shape[0] - frames :]
        z = z + _attention(z, keys, band, params, p, cfg.heads)
        h = _conv_input(z, params, p)
        kernels = params[f"{p}.conv.dw.w"]
        if band is None:
            dw = depthwise_conv1d(h, kernels)
        else:
            # layer_in rows [s, s+l) are the layer input of the block before frame s
            pad = _conv_input(layer_in, params, p)
            dw = np.concatenate(
                [blockwise_depthwise_conv(h[s : s + l], pad[s : s + l], kernels) for s in range(0, frames, l)]
            )
        z = z + _conv_output(dw, params, p)
        z = z + DTYPE(0.5) * _ffn(z, params, f"{p}.ln_ff2", f"{p}.ff2")
        z = _ln(z, params, f"{p}.ln_out")
    return EncoderOutput(_ln(z, params, "enc.ln_final"), 0)
