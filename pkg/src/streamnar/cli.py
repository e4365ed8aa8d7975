"""``streamnar`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import checkpoint as ckpt_io
from .ctc import Vocab, load_vocab
from .errors import StreamNarError
from .frontend import load_features, save_features, synthesize_features
from .merge import merge_hypotheses, read_hypotheses
from .mlm import MaskPredictConfig
from .pipeline import SessionConfig, bench, block_ms_to_frames, decode, format_bench_table

FEATURE_SUFFIXES = (".snfb", ".feats", ".bin", ".txt")


def _block_ms_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad block length list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamnar", description="Streaming non-autoregressive ASR inference")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", help="decode one feature file")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--mode", choices=("full", "streaming"), default="streaming")
    p.add_argument("--block-ms", type=float, default=640.0)
    p.add_argument("--threshold", type=float, default=0.99)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--timestamps", action="store_true", help="one line per token with its emission time")

    p = sub.add_parser("bench", help="latency / RTF sweep over block lengths")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True, help="directory of feature files (or a single file)")
    p.add_argument("--block-ms", type=_block_ms_list, default=[2560.0, 1280.0, 640.0, 320.0])
    p.add_argument("--vocab")
    p.add_argument("--threshold", type=float, default=0.99)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--repeats", type=int, default=1, help="decode each utterance N times, keep the fastest")
    p.add_argument("--json", help="write per-utterance JSON records here ('-' for stdout)")

    p = sub.add_parser("merge", help="merge block hypothesis JSON-lines files")
    p.add_argument("files", nargs="+")
    p.add_argument("--vocab")

    p = sub.add_parser("init", help="write a randomly initialized checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=sorted(ckpt_io.PRESETS), default="tiny")
    p.add_argument("--variant", choices=("transformer", "conformer"))
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--vocab-out", help="also write a placeholder vocabulary file")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="write a synthetic feature file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--dim", type=int, default=83)
    p.add_argument("--out", required=True)
    return parser


def _feature_files(path: Path) -> List[Path]:
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix in FEATURE_SUFFIXES)
    return [path]


def cmd_decode(args) -> int:
    model = ckpt_io.read_checkpoint_file(args.model)
    vocab = load_vocab(args.vocab)
    feats = load_features(args.features)
    mask_cfg = MaskPredictConfig(args.threshold, args.iterations)
    mode = "full_context" if args.mode == "full" else "streaming"
    raw_len = block_ms_to_frames(args.block_ms, feats.frame_shift_ms)
    if mode == "full_context":
        raw_len = 4 * model.encoder.block_len
    session = SessionConfig(mode, raw_len, mask_cfg, args.timestamps)
    tokens, metrics = decode(feats, model, session, vocab)
    if args.timestamps:
        for t in tokens:
            print(f"{t.emit_time:.2f}\t{t.token}\t{t.source}\t{t.block_index}")
    else:
        print(" ".join(t.token for t in tokens))
    print(
        f"latency_ms={metrics.latency_ms:.2f} rtf={metrics.rtf:.4f} "
        f"compute_ms={metrics.compute_ms:.2f} audio_ms={metrics.audio_duration_ms:.0f}",
        file=sys.stderr,
    )
    return 0


def cmd_bench(args) -> int:
    model = ckpt_io.read_checkpoint_file(args.model)
    vocab = load_vocab(args.vocab) if args.vocab else None
    files = _feature_files(Path(args.features))
    if not files:
        print(f"error: no feature files in {args.features}", file=sys.stderr)
        return 2
    utts = {p.stem: load_features(p) for p in files}
    records, summaries = bench(
        model, utts, args.block_ms, MaskPredictConfig(args.threshold, args.iterations), vocab, args.repeats
    )
    print(format_bench_table(summaries))
    if args.json:
        lines = "\n".join(json.dumps(r.to_json()) for r in records) + "\n"
        if args.json == "-":
            sys.stdout.write(lines)
        else:
            Path(args.json).write_text(lines)
    return 0


def cmd_merge(args) -> int:
    hyps = []
    for name in args.files:
        with open(name, encoding="utf-8") as fh:
            hyps.extend(read_hypotheses(fh))
    transcript = merge_hypotheses(hyps)
    if args.vocab:
        print(" ".join(load_vocab(args.vocab).decode(transcript.token_ids)))
    else:
        print(" ".join(str(t) for t in transcript.token_ids))
    return 0


def cmd_init(args) -> int:
    model = ckpt_io.preset(args.preset, args.seed, args.variant, args.vocab_size)
    ckpt_io.write_checkpoint_file(model, args.out)
    if args.vocab_out:
        Path(args.vocab_out).write_text(Vocab.default(model.vocab_size).dumps(), encoding="utf-8")
    return 0


def cmd_synth(args) -> int:
    save_features(synthesize_features(args.seed, args.frames, args.dim), args.out)
    return 0


COMMANDS = {"decode": cmd_decode, "bench": cmd_bench, "merge": cmd_merge, "init": cmd_init, "synth": cmd_synth}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except StreamNarError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
