"""Command-line entry point: train, encode, decode, eval, info, init, make-corpus.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error,
3 data or format error, 4 model/bitstream incompatibility.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import torch

from .audio import SAMPLE_RATE, AudioBuffer, find_wavs, load_wav, resample, save_wav
from .bitstream import file_bitrate, read_spc, write_spc
from .codec import BypassCodec, Codec
from .errors import (CheckpointVersionError, CodecError, ConfigurationError, IncompatibilityError,
                     TrainingDivergedError)
from .metrics import aggregate, evaluate_codec, write_report
from .train import PRESETS, TrainConfig, load_config, preset, train

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INCOMPATIBLE = 4

log = logging.getLogger("bpcodec")


class CliError(Exception):
    def __init__(self, message, code=EXIT_DATA):
        super().__init__(message)
        self.code = code


@contextlib.contextmanager
def atomic_output(path):
    """Yield a temporary sibling of ``path``; rename it into place only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=path.suffix, dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        Path(tmp).unlink(missing_ok=True)


def _flag(name):
    return "--" + name.replace("_", "-")


def _add_config_flags(parser):
    """One flag per TrainConfig field; unset flags leave the config value alone."""
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(TrainConfig):
        kind = type(f.default)
        if kind is bool:
            group.add_argument(_flag(f.name), dest=f.name, action=argparse.BooleanOptionalAction,
                               default=None)
        else:
            group.add_argument(_flag(f.name), dest=f.name, type=kind, default=None, metavar=kind.__name__.upper())
    parser.add_argument("--preset", choices=sorted(PRESETS), default=None,
                        help="starting values (default: desk, or the config file's preset key)")
    parser.add_argument("--config", type=Path, default=None, help="YAML file of config keys")


def config_from_args(args) -> TrainConfig:
    if args.config is not None:
        if not args.config.is_file():
            raise CliError(f"config file not found: {args.config}", EXIT_USAGE)
        base = load_config(args.config, base=args.preset or "desk")
        values = dataclasses.asdict(base)
        if args.preset is not None:
            # an explicit --preset still wins over the file's own preset key
            values = {**values, **PRESETS[args.preset]}
    else:
        values = dataclasses.asdict(preset(args.preset or "desk"))
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, f.name)
        if v is not None:
            values[f.name] = v
    return TrainConfig(**values)


def _load_model(spec):
    if spec == "identity":
        return BypassCodec()
    path = Path(spec)
    if not path.is_file():
        raise CliError(f"checkpoint not found: {path}")
    return Codec.load(path)


def _read_input_wav(path) -> AudioBuffer:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"input not found: {path}")
    buf = load_wav(path)
    if buf.sample_rate != SAMPLE_RATE:
        log.info("resampling %s from %d Hz", path, buf.sample_rate)
        buf = resample(buf, SAMPLE_RATE)
    return buf


def cmd_train(args):
    config = config_from_args(args)
    corpus = Path(args.corpus)
    if not corpus.is_dir() or not find_wavs(corpus):
        raise CliError(f"corpus has no WAV files: {corpus}")
    if args.resume is not None and not Path(args.resume).is_file():
        raise CliError(f"resume checkpoint not found: {args.resume}")
    log.info("training %s", json.dumps(dataclasses.asdict(config)))
    final = train(config, corpus, args.out, resume=args.resume)
    print(final)
    return EXIT_OK


def cmd_init(args):
    config = config_from_args(args)
    codec = Codec(config.codec_config(), config.rvq_config(), seed=config.seed)
    codec.save(args.out)
    print(args.out)
    return EXIT_OK


def cmd_encode(args):
    codec = _load_model(args.model)
    if isinstance(codec, BypassCodec):
        raise CliError("encode needs a trained checkpoint", EXIT_USAGE)
    buf = _read_input_wav(args.input)
    blob = codec.encode(buf)
    with atomic_output(args.output) as tmp:
        write_spc(blob, tmp)
    print(f"{codec.bitrate():.0f} bps")
    log.info("file bitrate including header: %.1f bps", file_bitrate(blob))
    return EXIT_OK


def cmd_decode(args):
    codec = _load_model(args.model)
    if isinstance(codec, BypassCodec):
        raise CliError("decode needs a trained checkpoint", EXIT_USAGE)
    path = Path(args.input)
    if not path.is_file():
        raise CliError(f"input not found: {path}")
    out = codec.decode(read_spc(path))
    with atomic_output(args.output) as tmp:
        save_wav(out, tmp)
    return EXIT_OK


def cmd_eval(args):
    codec = _load_model(args.model)
    corpus = Path(args.corpus)
    files = find_wavs(corpus) if corpus.is_dir() else []
    if args.max_files:
        files = files[: args.max_files]
    if not files:
        raise CliError(f"corpus has no WAV files: {corpus}")
    buffers = [_read_input_wav(f) for f in files]
    if isinstance(codec, Codec):
        torch.set_num_threads(1)
    rows = evaluate_codec(codec, buffers, with_rtf=args.rtf, repetitions=args.repetitions)
    export = Path(args.export_dir) if args.export_dir else Path(args.report).with_suffix("")
    export.parent.mkdir(parents=True, exist_ok=True)
    export_tmp = Path(tempfile.mkdtemp(prefix=f".{export.name}.", dir=export.parent))
    try:
        # reference/degraded pairs for external perceptual scorers
        for f, row, buf in zip(files, rows, buffers):
            rel = f.relative_to(corpus)
            row.file = str(rel)
            degraded = codec.decode(codec.encode(buf))
            for sub, audio in (("reference", buf), ("degraded", degraded)):
                target = export_tmp / sub / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                save_wav(audio, target)
        with atomic_output(args.report) as tmp:
            write_report(rows + [aggregate(rows)], tmp)
        if export.exists():
            shutil.rmtree(export)
        os.replace(export_tmp, export)
    finally:
        shutil.rmtree(export_tmp, ignore_errors=True)
    mean = aggregate(rows)
    print(f"files={len(rows)} stoi={mean.stoi:.4f} snr_db={mean.snr_db:.2f} bitrate_bps={mean.bitrate_bps:.0f}")
    return EXIT_OK


def cmd_info(args):
    path = Path(args.model)
    if not path.is_file():
        raise CliError(f"checkpoint not found: {path}")
    from .checkpoint import load_archive

    payload = load_archive(path)
    codec = Codec.from_payload(payload)
    disc = None
    if "train_config" in payload:
        from .adversary import Discriminators

        tc = payload["train_config"]
        disc = Discriminators(tc["disc_wave_channels"], tc["disc_stft_channels"])
    counts = codec.param_count(disc)
    print(json.dumps({"codec_config": payload["codec_config"], "rvq_config": payload["rvq_config"],
                      "step": payload.get("step")}, sort_keys=True))
    for name, n in counts.items():
        print(f"{name}: {n}")
    print(f"{codec.bitrate():.0f} bps")
    return EXIT_OK


def cmd_make_corpus(args):
    from .toycorpus import make_toy_corpus

    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise CliError(f"refusing to write into non-empty directory {out}", EXIT_USAGE)
    files = make_toy_corpus(out, minutes=args.minutes, seed=args.seed)
    print(f"{len(files)} files in {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bpcodec", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("train", help="train a codec on a WAV corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="training checkpoint to continue from")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("init", help="write an untrained checkpoint for a config")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("encode", help="WAV -> .spc")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help=".spc -> WAV")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score a checkpoint (or 'identity') on a WAV corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--export-dir", default=None,
                   help="reference/degraded WAV pairs for external scorers (default: report path without suffix)")
    p.add_argument("--rtf", action="store_true", help="also time encode and decode")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--max-files", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("info", help="config, parameter counts and bitrate of a checkpoint")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("make-corpus", help="write a synthetic speech-like WAV corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--minutes", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except ConfigurationError as exc:
        code, msg = EXIT_USAGE, str(exc)
    except (IncompatibilityError, CheckpointVersionError) as exc:
        code, msg = EXIT_INCOMPATIBLE, str(exc)
    except TrainingDivergedError as exc:
        code, msg = EXIT_RUNTIME, f"{exc} snapshot={json.dumps(exc.snapshot)}"
    except (CodecError, OSError, EOFError) as exc:
        code, msg = EXIT_DATA, str(exc)
    print(f"bpcodec {args.command}: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
