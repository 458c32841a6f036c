"""Command-line entry point: ``melsep {mapping,init,train,separate,evaluate,compare}``.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np
import torch

from . import bandmap
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data_io import WavError, list_tracks, load_track_dir, read_wav, synth_fixture, write_wav
from .evaluation import NameMismatch, SdrError, chunked_track_sdr, evaluate_dirs, write_reports
from .model import MelRoformer, ModelConfig, ModelError, NumericalError
from .pipeline import separate_track
from .spectral import SpectralError, WindowConfig
from .trainer import (Example, LossWeights, TrainConfig, ab_compare, batch_loss, evaluate_on, train,
                      write_loss_csv)

log = logging.getLogger("melsep")

EXIT_USAGE = 2
EXIT_NUMERIC = 3

DEFAULTS = {
    "sample_rate": 44100,
    "fft_size": 2048,
    "hop": 512,
    "window": "hann",
    "drop_nyquist": False,
    "mode": "mel",
    "n_bands": 60,
    "boundaries": None,
    "embed_dim": 64,
    "heads": 4,
    "blocks": 2,
    "ffn_multiplier": 4,
    "mask_multiplier": 4,
    "channels": 2,
    "precision": "single",
    "chunk_seconds": 4.0,
    "stem": "vocals",
    "steps": 500,
    "lr": 1e-3,
    "batch_size": 1,
    "seed": 0,
    "spectral_weight": 1.0,
    "waveform_weight": 1.0,
    "sdr_ceiling": 100.0,
    "eval_chunk_seconds": 1.0,
    "jobs": 1,
}

_pos_int = {"type": "integer", "minimum": 1}
_nonneg = {"type": "number", "minimum": 0}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "sample_rate": _pos_int,
        "fft_size": {"type": "integer", "minimum": 2},
        "hop": _pos_int,
        "window": {"enum": ["hann", "boxcar"]},
        "drop_nyquist": {"type": "boolean"},
        "mode": {"enum": ["mel", "bandsplit"]},
        "n_bands": {"type": "integer", "minimum": 2},
        "boundaries": {"anyOf": [{"type": "null"}, {"type": "string"},
                                 {"type": "array", "items": {"type": "integer", "minimum": 0}}]},
        "embed_dim": _pos_int,
        "heads": _pos_int,
        "blocks": _pos_int,
        "ffn_multiplier": _pos_int,
        "mask_multiplier": _pos_int,
        "channels": _pos_int,
        "precision": {"enum": ["single", "double"]},
        "chunk_seconds": {"type": "number", "exclusiveMinimum": 0},
        "stem": {"type": "string", "minLength": 1},
        "steps": _pos_int,
        "lr": _nonneg,
        "batch_size": _pos_int,
        "seed": {"type": "integer", "minimum": 0},
        "spectral_weight": _nonneg,
        "waveform_weight": _nonneg,
        "sdr_ceiling": {"type": "number"},
        "eval_chunk_seconds": {"type": "number", "exclusiveMinimum": 0},
        "jobs": _pos_int,
    },
}


class UsageError(Exception):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(path=None, overrides=(), **flags) -> dict:
    """Defaults < config file < ``--set key=value`` < dedicated flags."""
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        cfg.update(doc)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"override {item!r} is not key=value")
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r}")
        cfg[key] = _parse_value(value)
    cfg.update({k: v for k, v in flags.items() if v is not None})
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "config"
        raise UsageError(f"invalid {where}: {exc.message}") from exc
    return cfg


def window_from(cfg) -> WindowConfig:
    return WindowConfig(cfg["fft_size"], cfg["hop"], cfg["window"], cfg["sample_rate"], cfg["drop_nyquist"])


def mapping_from(cfg, window: WindowConfig) -> bandmap.BandMapping:
    if cfg["mode"] == "mel":
        return bandmap.mel_mapping(window.sample_rate, window.fft_size, cfg["n_bands"])
    bounds = cfg["boundaries"]
    if bounds is None:
        bounds = bandmap.default_bandsplit_boundaries()
    elif isinstance(bounds, str):
        bounds = bandmap.load_boundaries(bounds)
    n_bins = window.fft_size // 2 + 1
    return bandmap.bandsplit_mapping(bounds, n_bins, window.sample_rate, window.fft_size)


def model_config_from(cfg) -> ModelConfig:
    window = window_from(cfg)
    mapping = mapping_from(cfg, window)
    if window.drop_nyquist:
        raise UsageError("drop_nyquist is not supported for models (mapping covers the Nyquist bin)")
    return ModelConfig(mapping, cfg["embed_dim"], cfg["heads"], cfg["blocks"], cfg["ffn_multiplier"],
                       cfg["mask_multiplier"], cfg["channels"], cfg["precision"], True, 10000.0, window,
                       cfg["chunk_seconds"], cfg["stem"])


def train_config_from(cfg) -> TrainConfig:
    return TrainConfig(cfg["steps"], cfg["lr"], cfg["batch_size"], cfg["seed"],
                       LossWeights(cfg["spectral_weight"], cfg["waveform_weight"]), cfg["precision"])


# -- subcommands ---------------------------------------------------------------

def cmd_mapping(args) -> int:
    window_sr, fft = args.sr, args.fft
    if args.mode == "mel":
        if args.bands is None:
            raise UsageError("--bands is required for --mode mel")
        mapping = bandmap.mel_mapping(window_sr, fft, args.bands, patch=args.patch)
        if args.dedup:
            mapping = bandmap.deduplicate(mapping)
    else:
        if args.boundaries is None:
            bounds = bandmap.default_bandsplit_boundaries()
        else:
            bounds = bandmap.load_boundaries(args.boundaries)
        mapping = bandmap.bandsplit_mapping(bounds, fft // 2 + 1, window_sr, fft)
    mapping.save(args.out)
    if args.csv:
        mapping.save_csv(args.csv)
    print(f"bands: {mapping.n_bands}  bins: {mapping.n_bins}  mode: {mapping.mode}")
    print("widths: " + " ".join(str(w) for w in mapping.widths))
    if mapping.mode == bandmap.MEL:
        print("shared: " + " ".join(str(s) for s in bandmap.overlap_stats(mapping)))
    uncovered = np.flatnonzero(mapping.coverage == 0)
    if len(uncovered):
        print(f"uncovered bins: {uncovered.tolist()}")
    print(f"wrote {args.out}")
    return 0


def cmd_init(args) -> int:
    cfg = resolve_config(args.config, args.set)
    model = MelRoformer(model_config_from(cfg), seed=cfg["seed"])
    if args.identity:
        model.set_identity_mask()
    save_checkpoint(args.out, model, {"kind": "identity" if args.identity else "init"})
    print(f"wrote {args.out}")
    return 0


def _dataset_examples(root, cfg, window, dtype):
    tracks = list_tracks(root)
    if not tracks:
        raise UsageError(f"{root}: no track folders")
    seg = int(round(cfg["chunk_seconds"] * window.sample_rate))
    examples = []
    for folder in tracks:
        bundle = load_track_dir(folder, window.sample_rate)
        if cfg["stem"] not in bundle.stems:
            raise UsageError(f"{folder}: no {cfg['stem']}.wav")
        target = bundle.stems[cfg["stem"]]
        for start in range(0, max(len(bundle) - seg, 0) + 1, seg):
            mix = bundle.mixture[start:start + seg]
            if len(mix) >= window.fft_size:
                examples.append(Example.from_waves(mix, target[start:start + seg], window, dtype))
    return examples


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.set, steps=args.steps, seed=args.fixture, stem=args.stem)
    if args.fixture is None and args.data is None:
        raise UsageError("give --fixture SEED or --data DIR")
    if args.data is not None and not Path(args.data).is_dir():
        raise UsageError(f"dataset path {args.data} does not exist")
    model_config = model_config_from(cfg)
    train_config = train_config_from(cfg)
    window = model_config.stft
    if args.fixture is not None:
        bundle = synth_fixture(args.fixture, window.sample_rate)
        if model_config.stem not in bundle.stems:
            raise UsageError(f"fixture has stems {sorted(bundle.stems)}, not {model_config.stem!r}")
        examples = [Example.from_waves(bundle.mixture, bundle.stems[model_config.stem], window, model_config.dtype)]
    else:
        bundle = None
        examples = _dataset_examples(args.data, cfg, window, model_config.dtype)

    model = MelRoformer(model_config, seed=train_config.seed)

    def report(step, value):
        if step % max(1, train_config.steps // 10) == 0:
            log.info("step %d loss %.6g", step, value)

    with torch.no_grad():
        initial = batch_loss(model, examples, train_config.weights).item()
    losses = train(model, examples, train_config, report)
    with torch.no_grad():
        final = batch_loss(model, examples, train_config.weights).item()
    save_checkpoint(args.out, model, {"kind": "trained", "steps": train_config.steps, "final_loss": final})
    if args.loss_csv:
        write_loss_csv(args.loss_csv, losses)
    print(f"initial loss: {initial:.6g}")
    print(f"final loss: {final:.6g}")
    print(f"final/initial loss ratio: {final / initial:.4f}")
    if bundle is not None:
        print(f"training-mixture SDR ({model_config.stem}): {evaluate_on(model, bundle, model_config.stem):.2f} dB")
    print(f"wrote {args.out}")
    return 0


def cmd_separate(args) -> int:
    try:
        model, _ = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        raise UsageError(str(exc)) from exc
    audio, sr = read_wav(args.input)
    window = model.config.stft
    if sr != window.sample_rate:
        raise UsageError(f"{args.input}: sample rate {sr} does not match checkpoint ({window.sample_rate})")
    if audio.shape[1] != model.config.channels:
        raise UsageError(f"{args.input}: {audio.shape[1]} channels, checkpoint expects {model.config.channels}")
    est = separate_track(audio, model, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{model.config.stem}.wav"
    write_wav(path, est, sr)
    print(f"wrote {path} ({len(est)} samples)")
    if args.reference:
        ref, _ = read_wav(args.reference)
        print(f"SDR ({model.config.stem}): {chunked_track_sdr(ref, est.astype(np.float32), sr).per_track:.2f} dB")
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args.config, args.set)
    try:
        reports = evaluate_dirs(args.ref, args.est, cfg["eval_chunk_seconds"], cfg["sdr_ceiling"])
    except NameMismatch as exc:
        print("mismatched tracks/stems:", file=sys.stderr)
        for name in exc.offenders:
            print(f"  {name}", file=sys.stderr)
        return EXIT_USAGE
    write_reports(reports, args.json, args.csv)
    for r in reports:
        for name, score in r.per_track.items():
            print(f"{name}\t{r.stem}\t{score:.3f} dB")
        print(f"dataset median SDR ({r.stem}): {r.dataset:.3f} dB")
    return 0


def cmd_compare(args) -> int:
    cfg = resolve_config(args.config, args.set, steps=args.steps, seed=args.fixture)
    reports = ab_compare(train_config_from(cfg))
    for mode, r in reports.items():
        print(f"{mode}: loss ratio {r.loss_ratio:.4f}  SDR {r.sdr:.2f} dB  ({r.seconds:.0f} s)")
    return 0


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="melsep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        return p

    p = sub.add_parser("mapping", help="build a bin-to-band mapping")
    p.add_argument("--sr", type=_positive, default=44100)
    p.add_argument("--fft", type=_positive, default=2048)
    p.add_argument("--bands", type=_positive)
    p.add_argument("--mode", choices=["mel", "bandsplit"], default="mel")
    p.add_argument("--boundaries", help="JSON file with 'boundaries' or 'widths'")
    p.add_argument("--patch", action="store_true", help="assign uncovered bins (DC) to the nearest band")
    p.add_argument("--dedup", action="store_true", help="experimental: give shared bins to the lower band")
    p.add_argument("--out", default="mapping.json")
    p.add_argument("--csv", help="also dump the binary matrix as CSV")
    p.set_defaults(func=cmd_mapping)

    p = with_config(sub.add_parser("init", help="write an untrained checkpoint"))
    p.add_argument("--identity", action="store_true", help="debug model that emits the all-ones mask")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = with_config(sub.add_parser("train", help="train one stem model"))
    p.add_argument("--fixture", type=int, metavar="SEED", help="train on the synthetic fixture")
    p.add_argument("--data", help="MUSDB-style root: <root>/<track>/{mixture,<stem>}.wav")
    p.add_argument("--steps", type=_positive)
    p.add_argument("--stem")
    p.add_argument("--out", default="model.ckpt")
    p.add_argument("--loss-csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="separate one WAV file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=_positive, default=1)
    p.add_argument("--reference", help="reference stem WAV; prints SDR")
    p.set_defaults(func=cmd_separate)

    p = with_config(sub.add_parser("evaluate", help="median-of-medians SDR report"))
    p.add_argument("--ref", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--json")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_evaluate)

    p = with_config(sub.add_parser("compare", help="train mel and bandsplit models on the fixture"))
    p.add_argument("--fixture", type=int, metavar="SEED")
    p.add_argument("--steps", type=_positive)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MELSEP_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits 2
    except (bandmap.BandMapError, SpectralError, ModelError, WavError, SdrError, FileNotFoundError) as exc:
        print(f"melsep: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"melsep: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
