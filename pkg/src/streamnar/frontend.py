"""Feature files, synthetic features and the 50%-overlap block iterator."""

from __future__ import annotations

import io
import math
import os
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator, Union

import numpy as np

from .errors import (
    BadMagic,
    BlockTooShort,
    ConfigError,
    DimensionZero,
    FormatError,
    MalformedText,
    NonFiniteValues,
    TruncatedPayload,
    VersionUnsupported,
)
from .numerics import DTYPE

MAGIC = b"SNFB"
VERSION = 1
_HEADER = struct.Struct("<4sIIIf")

DEFAULT_DIM = 83  # 80 log-mel + 3 pitch
DEFAULT_FRAME_SHIFT_MS = 10.0

ByteSource = Union[bytes, bytearray, memoryview, BinaryIO]


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    frame_shift_ms: float = DEFAULT_FRAME_SHIFT_MS

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=DTYPE)
        if v.ndim != 2:
            raise FormatError(f"features must be 2-D, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise DimensionZero(f"features must have frames >= 1 and dim >= 1, got {v.shape}")
        if not np.isfinite(v).all():
            raise NonFiniteValues("features contain NaN or Inf")
        if not (math.isfinite(self.frame_shift_ms) and self.frame_shift_ms > 0):
            raise FormatError(f"frame shift must be positive, got {self.frame_shift_ms}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def duration_ms(self) -> float:
        return self.frames * self.frame_shift_ms


@dataclass(frozen=True)
class RawBlock:
    """One fixed-length window of raw frames.

    ``end_frame`` is the end of real data; only the last block may have
    ``end_frame - start_frame < len(values)``, the rest being zero padding.
    """

    index: int
    start_frame: int
    end_frame: int
    values: np.ndarray
    is_last: bool

    @property
    def valid_frames(self) -> int:
        return self.end_frame - self.start_frame


def _read_all(source: ByteSource) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    return source.read()


def read_features(source: ByteSource, format: str = "binary") -> FeatureMatrix:
    data = _read_all(source)
    if format == "binary":
        return _read_binary(data)
    if format == "text":
        return _read_text(data)
    raise ValueError(f"unknown feature format {format!r}")


def _read_binary(data: bytes) -> FeatureMatrix:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise TruncatedPayload(f"header needs {_HEADER.size} bytes, file has {len(data)}")
    _, version, frames, dim, shift = _HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionUnsupported(f"feature file version {version} (supported: {VERSION})")
    if frames == 0 or dim == 0:
        raise DimensionZero(f"header declares T={frames}, D={dim}")
    need = frames * dim * 4
    payload = data[_HEADER.size :]
    if len(payload) < need:
        raise TruncatedPayload(f"header declares {frames}x{dim} floats, payload has {len(payload) // 4}")
    if len(payload) > need:
        raise FormatError(f"{len(payload) - need} trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(frames, dim)
    return FeatureMatrix(values.astype(DTYPE), float(shift))


def _read_text(data: bytes) -> FeatureMatrix:
    try:
        lines = data.decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise MalformedText(f"feature text is not UTF-8: {exc}") from None
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise MalformedText("empty feature text")
    head = lines[0].split()
    try:
        frames, dim, shift = int(head[0]), int(head[1]), float(head[2])
    except (IndexError, ValueError):
        raise MalformedText(f"bad header line {lines[0]!r}") from None
    if len(head) != 3:
        raise MalformedText(f"bad header line {lines[0]!r}")
    if frames <= 0 or dim <= 0:
        raise DimensionZero(f"header declares T={frames}, D={dim}")
    if len(lines) - 1 < frames:
        raise TruncatedPayload(f"header declares {frames} rows, found {len(lines) - 1}")
    if len(lines) - 1 > frames:
        raise MalformedText(f"header declares {frames} rows, found {len(lines) - 1}")
    rows = []
    for n, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != dim:
            raise MalformedText(f"line {n}: expected {dim} values, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise MalformedText(f"line {n}: non-numeric value") from None
    return FeatureMatrix(np.array(rows, dtype=DTYPE), shift)


def write_features(f: FeatureMatrix, sink: BinaryIO, format: str = "binary") -> None:
    if format == "binary":
        sink.write(_HEADER.pack(MAGIC, VERSION, f.frames, f.dim, f.frame_shift_ms))
        sink.write(f.values.astype("<f4").tobytes())
    elif format == "text":
        out = [f"{f.frames} {f.dim} {f.frame_shift_ms!r}"]
        # 9 significant digits round-trips float32
        out += [" ".join(format_float(v) for v in row) for row in f.values.tolist()]
        sink.write(("\n".join(out) + "\n").encode("utf-8"))
    else:
        raise ValueError(f"unknown feature format {format!r}")


def format_float(v: float) -> str:
    return f"{v:.9g}"


def features_to_bytes(f: FeatureMatrix, format: str = "binary") -> bytes:
    buf = io.BytesIO()
    write_features(f, buf, format)
    return buf.getvalue()


def _format_for(path) -> str:
    return "text" if os.fspath(path).endswith(".txt") else "binary"


def load_features(path) -> FeatureMatrix:
    """Read a feature file, choosing the text format for ``*.txt`` paths."""
    with open(path, "rb") as fh:
        return read_features(fh, _format_for(path))


def save_features(f: FeatureMatrix, path) -> None:
    with open(path, "wb") as fh:
        write_features(f, fh, _format_for(path))


def synthesize_features(
    seed: int, frames: int, dim: int = DEFAULT_DIM, frame_shift_ms: float = DEFAULT_FRAME_SHIFT_MS
) -> FeatureMatrix:
    if frames < 1 or dim < 1:
        raise DimensionZero(f"frames and dim must be >= 1, got {frames}, {dim}")
    rng = np.random.default_rng(seed)
    return FeatureMatrix(rng.standard_normal((frames, dim), dtype=DTYPE), frame_shift_ms)


def check_block_len(raw_block_len: int) -> None:
    if raw_block_len < 8:
        raise BlockTooShort(f"raw block length {raw_block_len} < 8")
    if raw_block_len % 2:
        raise BlockTooShort(f"raw block length {raw_block_len} must be even")


def block_stream(f: FeatureMatrix, raw_block_len: int, overlap: float = 0.5) -> Iterator[RawBlock]:
    """Yield fixed-length blocks with stride ``raw_block_len // 2``.

    The final block is zero-padded to full length and flagged ``is_last``.
    """
    check_block_len(raw_block_len)
    if overlap != 0.5:
        raise ConfigError("only 50% overlap is supported")
    stride = raw_block_len // 2
    total = f.frames
    index = 0
    start = 0
    while True:
        end = min(start + raw_block_len, total)
        block = f.values[start:end]
        if end - start < raw_block_len:
            pad = np.zeros((raw_block_len - (end - start), f.dim), dtype=DTYPE)
            block = np.concatenate([block, pad])
        is_last = start + raw_block_len >= total
        yield RawBlock(index, start, end, block, is_last)
        if is_last:
            return
        index += 1
        start += stride
