"""Model checkpoints: config + named float32 tensors.

Binary layout (little-endian)::

    b"SNCK" | version u32 | config_len u32 | config JSON (UTF-8)
    then until EOF, one record per tensor:
    name_len u32 | name (UTF-8) | rank u32 | dims u32 * rank | float32 payload
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field, fields
from typing import BinaryIO, Dict, Mapping, Optional

import numpy as np

from .encoder import EncoderConfig, ParamSpec, encoder_param_specs, linear_specs
from .errors import (
    BadMagic,
    ConfigError,
    FormatError,
    MalformedConfig,
    MissingTensor,
    NonFiniteValues,
    ShapeMismatch,
    TruncatedPayload,
    UnexpectedTensor,
    VersionUnsupported,
)
from .frontend import ByteSource, _read_all
from .mlm import DecoderConfig, decoder_param_specs
from .numerics import DTYPE

MAGIC = b"SNCK"
VERSION = 1
MAX_RANK = 8

PRESETS = {
    "paper": dict(encoder=dict(), decoder=dict(), vocab_size=500),
    "tiny": dict(
        encoder=dict(layers=2, heads=2, model_dim=16, ffn_dim=32),
        decoder=dict(layers=2, heads=2, model_dim=16, ffn_dim=32),
        vocab_size=32,
    ),
}


def model_param_specs(enc: EncoderConfig, dec: DecoderConfig, vocab_size: int) -> Dict[str, ParamSpec]:
    if enc.model_dim != dec.model_dim:
        raise ConfigError(f"encoder dim {enc.model_dim} != decoder dim {dec.model_dim}")
    if vocab_size < 3:
        raise ConfigError(f"vocab_size must be >= 3, got {vocab_size}")
    specs = encoder_param_specs(enc)
    specs.update(linear_specs("ctc", enc.model_dim, vocab_size))
    specs.update(decoder_param_specs(dec, vocab_size))
    return specs


@dataclass(frozen=True)
class ModelCheckpoint:
    encoder: EncoderConfig
    decoder: DecoderConfig
    vocab_size: int
    tensors: Mapping[str, np.ndarray] = field(repr=False)
    vocab: Optional[str] = None  # optional path or name of the vocabulary file
    allow_extra: bool = False

    def config_dict(self) -> dict:
        out = {
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
            "vocab_size": self.vocab_size,
        }
        if self.vocab is not None:
            out["vocab"] = self.vocab
        if self.allow_extra:
            out["allow_extra"] = True
        return out

    def validate(self) -> None:
        specs = model_param_specs(self.encoder, self.decoder, self.vocab_size)
        for name, spec in specs.items():
            if name not in self.tensors:
                raise MissingTensor(name)
            t = self.tensors[name]
            if tuple(t.shape) != spec.shape:
                raise ShapeMismatch(name, spec.shape, t.shape)
            if not np.isfinite(t).all():
                raise NonFiniteValues(f"tensor {name!r} contains NaN or Inf")
        if not self.allow_extra:
            for name in self.tensors:
                if name not in specs:
                    raise UnexpectedTensor(name)

    def with_block_len(self, block_len: int) -> "ModelCheckpoint":
        """Same weights, different encoder block length (weights do not depend on it)."""
        if block_len == self.encoder.block_len:
            return self
        return ModelCheckpoint(
            self.encoder.with_block_len(block_len), self.decoder, self.vocab_size, self.tensors, self.vocab,
            self.allow_extra,
        )


def _configs_from_dict(cfg: dict):
    enc_keys = {f.name for f in fields(EncoderConfig)}
    dec_keys = {f.name for f in fields(DecoderConfig)}
    enc = cfg.get("encoder", {})
    dec = cfg.get("decoder", {})
    if not isinstance(enc, dict) or not isinstance(dec, dict):
        raise MalformedConfig("encoder/decoder config must be objects")
    if set(enc) - enc_keys or set(dec) - dec_keys:
        raise MalformedConfig(f"unknown config keys: {sorted((set(enc) - enc_keys) | (set(dec) - dec_keys))}")
    for k, v in {**enc, **dec}.items():
        if k in ("variant", "attention"):
            if not isinstance(v, str):
                raise MalformedConfig(f"{k} must be a string")
        elif not isinstance(v, int) or isinstance(v, bool) or not 0 < v <= 1 << 20:
            raise MalformedConfig(f"{k} must be a positive integer, got {v!r}")
    if sum(v for k, v in {**enc, **dec}.items() if k == "layers") > 1024:
        raise MalformedConfig("implausible layer count")
    vocab_size = cfg.get("vocab_size")
    if not isinstance(vocab_size, int) or isinstance(vocab_size, bool) or not 3 <= vocab_size <= 1 << 20:
        raise MalformedConfig(f"bad vocab_size {vocab_size!r}")
    vocab = cfg.get("vocab")
    if vocab is not None and not isinstance(vocab, str):
        raise MalformedConfig("vocab must be a string")
    try:
        return EncoderConfig(**enc), DecoderConfig(**dec), vocab_size, vocab, bool(cfg.get("allow_extra", False))
    except ConfigError as exc:
        raise MalformedConfig(str(exc)) from None


def random_init(
    seed: int, enc: EncoderConfig, dec: DecoderConfig, vocab_size: int, vocab: Optional[str] = None
) -> ModelCheckpoint:
    """Deterministic initialization: fan-in scaled uniform weights, unit norms."""
    rng = np.random.default_rng(seed)
    tensors: Dict[str, np.ndarray] = {}
    for name, spec in model_param_specs(enc, dec, vocab_size).items():
        if spec.init == "ones":
            t = np.ones(spec.shape, DTYPE)
        elif spec.init == "zeros":
            t = np.zeros(spec.shape, DTYPE)
        elif spec.init == "embed":
            t = rng.standard_normal(spec.shape, dtype=DTYPE)
        else:
            bound = 1.0 / np.sqrt(spec.fan_in)
            t = rng.uniform(-bound, bound, spec.shape).astype(DTYPE)
        tensors[name] = t
    return ModelCheckpoint(enc, dec, vocab_size, tensors, vocab)


def preset(name: str, seed: int = 0, variant: Optional[str] = None, vocab_size: Optional[int] = None,
           **encoder_overrides) -> ModelCheckpoint:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    p = PRESETS[name]
    enc_kw = dict(p["encoder"], **encoder_overrides)
    if variant is not None:
        enc_kw["variant"] = variant
    return random_init(seed, EncoderConfig(**enc_kw), DecoderConfig(**p["decoder"]), vocab_size or p["vocab_size"])


def save_checkpoint(ckpt: ModelCheckpoint, sink: BinaryIO) -> None:
    blob = json.dumps(ckpt.config_dict(), sort_keys=True).encode("utf-8")
    sink.write(MAGIC + struct.pack("<II", VERSION, len(blob)) + blob)
    for name, t in ckpt.tensors.items():
        raw_name = name.encode("utf-8")
        arr = np.ascontiguousarray(t, dtype="<f4")
        sink.write(struct.pack("<I", len(raw_name)) + raw_name)
        sink.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        sink.write(arr.tobytes())


def checkpoint_to_bytes(ckpt: ModelCheckpoint) -> bytes:
    buf = io.BytesIO()
    save_checkpoint(ckpt, buf)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int, what: str) -> bytes:
        if n > self.remaining:
            raise TruncatedPayload(f"{what}: need {n} bytes, {self.remaining} left")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(source: ByteSource) -> ModelCheckpoint:
    data = _read_all(source)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {data[:4]!r}")
    r = _Reader(data)
    r.pos = 4
    version = r.u32("version")
    if version != VERSION:
        raise VersionUnsupported(f"checkpoint version {version} (supported: {VERSION})")
    blob = r.take(r.u32("config length"), "config")
    try:
        cfg = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedConfig(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise MalformedConfig("config must be a JSON object")
    enc, dec, vocab_size, vocab, allow_extra = _configs_from_dict(cfg)
    try:
        model_param_specs(enc, dec, vocab_size)
    except ConfigError as exc:
        raise MalformedConfig(str(exc)) from None

    tensors: Dict[str, np.ndarray] = {}
    while r.remaining:
        try:
            name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8") from None
        if name in tensors:
            raise FormatError(f"duplicate tensor {name!r}")
        rank = r.u32(f"{name}: rank")
        if rank > MAX_RANK:
            raise FormatError(f"{name}: implausible rank {rank}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{name}: dims"))
        count = math.prod(dims)
        payload = r.take(4 * count, f"{name}: payload")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(DTYPE)
    ckpt = ModelCheckpoint(enc, dec, vocab_size, tensors, vocab, allow_extra)
    ckpt.validate()
    return ckpt


def read_checkpoint_file(path) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        return load_checkpoint(fh)


def write_checkpoint_file(ckpt: ModelCheckpoint, path) -> None:
    with open(path, "wb") as fh:
        save_checkpoint(ckpt, fh)
