"""Streaming non-autoregressive speech recognition inference.

Blockwise-attention encoder, per-block greedy CTC, overlap merging with
dynamic mapping, and mask-predict refinement.
"""

from .checkpoint import ModelCheckpoint, load_checkpoint, preset, random_init, save_checkpoint
from .ctc import Vocab
from .encoder import EncoderConfig, EncoderState, encode_block, encode_full
from .errors import StreamNarError
from .frontend import FeatureMatrix, block_stream, read_features, synthesize_features, write_features
from .mlm import DecoderConfig, MaskPredictConfig
from .pipeline import SessionConfig, StreamingDecoder, decode, decode_full, decode_streaming, measure_rtf

__version__ = "0.1.0"
