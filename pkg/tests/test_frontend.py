import io
import struct

import numpy as np
import pytest

from streamnar.errors import (
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
from streamnar.frontend import (
    FeatureMatrix,
    block_stream,
    features_to_bytes,
    load_features,
    read_features,
    save_features,
    synthesize_features,
)


def binary(frames, dim, floats, magic=b"SNFB", version=1, shift=10.0):
    return struct.pack("<4sIIIf", magic, version, frames, dim, shift) + struct.pack(f"<{len(floats)}f", *floats)


def test_read_binary_small():
    f = read_features(binary(2, 3, [1, 2, 3, 4, 5, 6]))
    assert f.values.tolist() == [[1, 2, 3], [4, 5, 6]]
    assert f.frame_shift_ms == 10.0


def test_wrong_magic():
    with pytest.raises(BadMagic):
        read_features(binary(2, 3, [0] * 6, magic=b"XXXX"))


def test_truncated_payload():
    with pytest.raises(TruncatedPayload):
        read_features(binary(5, 4, [0.0] * 10))


def test_truncated_header():
    with pytest.raises(TruncatedPayload):
        read_features(b"SNFB\x01\x00")


def test_zero_dimension_header():
    with pytest.raises(DimensionZero):
        read_features(binary(0, 3, []))


def test_unknown_version():
    with pytest.raises(VersionUnsupported):
        read_features(binary(1, 1, [0.0], version=9))


def test_non_finite_payload():
    with pytest.raises(NonFiniteValues):
        read_features(binary(1, 2, [1.0, float("nan")]))


def test_trailing_bytes_rejected():
    with pytest.raises(FormatError):
        read_features(binary(1, 1, [1.0, 2.0]))


@pytest.mark.parametrize("fmt", ["binary", "text"])
def test_round_trip_is_bit_exact(fmt):
    f = synthesize_features(11, 37, 5)
    back = read_features(io.BytesIO(features_to_bytes(f, fmt)), fmt)
    assert back.values.tobytes() == f.values.tobytes()
    assert back.frame_shift_ms == f.frame_shift_ms


def test_file_round_trip_by_suffix(tmp_path):
    f = synthesize_features(2, 9, 4)
    for name in ("a.snfb", "a.txt"):
        save_features(f, tmp_path / name)
        assert load_features(tmp_path / name).values.tobytes() == f.values.tobytes()
    assert (tmp_path / "a.txt").read_text().startswith("9 4 ")


def test_text_errors():
    with pytest.raises(MalformedText):
        read_features(b"", "text")
    with pytest.raises(MalformedText):
        read_features(b"2 two 10\n1 2\n3 4\n", "text")
    with pytest.raises(TruncatedPayload):
        read_features(b"3 2 10\n1 2\n3 4\n", "text")
    with pytest.raises(MalformedText):
        read_features(b"2 2 10\n1 2\n3\n", "text")
    with pytest.raises(MalformedText):
        read_features(b"1 2 10\n1 x\n", "text")
    with pytest.raises(MalformedText):
        read_features(b"\xff\xfe", "text")
    with pytest.raises(NonFiniteValues):
        read_features(b"1 2 10\n1 inf\n", "text")


def test_feature_matrix_validation():
    with pytest.raises(DimensionZero):
        FeatureMatrix(np.zeros((0, 3)))
    with pytest.raises(NonFiniteValues):
        FeatureMatrix(np.array([[np.inf]]))
    with pytest.raises(FormatError):
        FeatureMatrix(np.zeros((2, 2)), frame_shift_ms=0.0)


def test_feature_matrix_is_immutable():
    f = synthesize_features(0, 4, 2)
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_synthesize_deterministic_and_seeded():
    assert synthesize_features(0, 4, 2).values.tolist() == synthesize_features(0, 4, 2).values.tolist()
    assert synthesize_features(0, 4, 2).values.tolist() != synthesize_features(1, 4, 2).values.tolist()


def test_synthesize_mean_near_zero():
    assert -0.1 < synthesize_features(7, 1000, 83).values.mean() < 0.1


def test_block_stream_three_blocks():
    blocks = list(block_stream(synthesize_features(0, 128, 2), 64))
    assert [b.start_frame for b in blocks] == [0, 32, 64]
    assert [b.is_last for b in blocks] == [False, False, True]


def test_block_stream_single_block():
    (b,) = block_stream(synthesize_features(0, 64, 2), 64)
    assert (b.start_frame, b.end_frame, b.is_last) == (0, 64, True)


def test_block_stream_padding():
    f = synthesize_features(0, 80, 2)
    blocks = list(block_stream(f, 64))
    assert [b.start_frame for b in blocks] == [0, 32]
    last = blocks[1]
    assert last.end_frame == 80 and last.valid_frames == 48 and last.is_last
    np.testing.assert_array_equal(last.values[:48], f.values[32:80])
    assert not last.values[48:].any()


def test_block_stream_short_utterance():
    (b,) = block_stream(synthesize_features(0, 5, 2), 16)
    assert b.values.shape == (16, 2) and b.valid_frames == 5


@pytest.mark.parametrize("frames", [1, 7, 32, 33, 95, 96, 97, 250])
@pytest.mark.parametrize("L", [8, 16, 64])
def test_blocks_reconstruct_the_input(frames, L):
    f = synthesize_features(frames, frames, 3)
    blocks = list(block_stream(f, L))
    rebuilt = np.zeros_like(f.values)
    for n, b in enumerate(blocks):
        assert b.index == n
        assert len(b.values) == L
        assert b.start_frame == n * (L // 2)
        rebuilt[b.start_frame : b.end_frame] = b.values[: b.valid_frames]
    np.testing.assert_array_equal(rebuilt, f.values)
    assert sum(b.is_last for b in blocks) == 1 and blocks[-1].is_last
    assert blocks[-1].end_frame == frames


def test_block_stream_rejects_bad_lengths():
    f = synthesize_features(0, 10, 2)
    with pytest.raises(BlockTooShort):
        list(block_stream(f, 6))
    with pytest.raises(BlockTooShort):
        list(block_stream(f, 9))
    with pytest.raises(ConfigError):
        list(block_stream(f, 16, overlap=0.25))
