"""Command line entry point.

Exit codes: 0 success, 1 a check ran and failed, 2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{path}: no such file or directory")
    return p


def _writable(path: str) -> Path:
    p = Path(path)
    if p.parent != Path("") and not p.parent.exists():
        raise UsageError(f"{path}: directory {p.parent} does not exist")
    return p


def _load_wav(path: str):
    from .audio import read_wav
    try:
        return read_wav(_existing(path))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_f0(path: str, n_samples: int | None = None):
    from .audio import f0_to_audio_rate, read_f0_csv
    try:
        t, f = read_f0_csv(_existing(path))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if n_samples is None:
        n_samples = int(round(t[-1] * 24000)) + 1
    return f0_to_audio_rate(t, f, n_samples)


def cmd_analyze(args) -> int:
    from .spectral import export_csv, mel_spectrogram, write_mel
    audio = _load_wav(args.input)
    if len(audio) <= 480:
        raise UsageError(f"{args.input}: too short for mel analysis")
    mel = mel_spectrogram(audio.samples)
    write_mel(_writable(args.mel), mel)
    if args.csv:
        export_csv(_writable(args.csv), mel.numpy(), mel.params.hop_size / mel.samplerate)
    print(f"{mel.n_frames} frames x {mel.values.shape[1]} bands -> {args.mel}")
    return EXIT_OK


def cmd_excite(args) -> int:
    from .audio import write_wav
    from .autodiff import Tensor
    from .wavetable import build_table_bank, synthesize_excitation
    f0 = _load_f0(args.f0, None if args.duration is None else int(round(args.duration * 24000)))
    if np.any(f0 > 1400) or np.any((f0 > 0) & (f0 < 45)):
        raise UsageError("F0 values must be 0 (unvoiced) or within [45, 1400] Hz")
    exc = synthesize_excitation(Tensor(f0, dtype=np.float64), build_table_bank()).data
    peak = np.max(np.abs(exc))
    if peak > 0:
        exc = exc * (args.level / peak)
    write_wav(_writable(args.output), exc)
    print(f"{len(exc)} samples -> {args.output}")
    return EXIT_OK


def cmd_resynth(args) -> int:
    from .audio import write_wav
    from .resynth import oracle_resynthesize
    audio = _load_wav(args.input)
    f0 = _load_f0(args.f0, len(audio))
    out, report = oracle_resynthesize(audio, f0, seed=args.seed)
    write_wav(_writable(args.output), out)
    if args.report:
        _writable(args.report).write_text(json.dumps(report.to_dict(), indent=2))
    print(f"mel distance {report.mel_mae_db:.2f} dB, {report.samples_per_second:,.0f} samples/s")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .losses import spectral_recon_loss
    from .resynth import mel_distance_db
    ref, gen = _load_wav(args.reference), _load_wav(args.generated)
    if len(ref) != len(gen):
        raise UsageError(f"length mismatch: {len(ref)} vs {len(gen)} samples")
    if len(ref) <= 900:
        raise UsageError("signals too short for the 75 ms resolution")
    report = spectral_recon_loss(ref.samples, gen.samples).to_dict()
    report["mel_distance_db"] = mel_distance_db(ref.samples, gen.samples)
    if args.json:
        text = json.dumps(report, indent=2)
        if args.json == "-":
            print(text)
        else:
            _writable(args.json).write_text(text)
    else:
        print(f"L_R {report['L_R']:.6f}  mel distance {report['mel_distance_db']:.3f} dB")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import REGISTRY, format_table, results_json, run_suite
    names = None
    if args.op:
        unknown = [n for n in args.op if n not in REGISTRY]
        if unknown:
            raise UsageError(f"unknown op(s) {', '.join(unknown)}; known: {', '.join(REGISTRY)}")
        names = args.op
    results = run_suite(names, instances=args.instances, seed=args.seed)
    print(format_table(results))
    if args.json:
        _writable(args.json).write_text(results_json(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def cmd_train_f0(args) -> int:
    from .config import PipelineConfig
    from .training import TrainingDiverged, load_dataset_dir, synthetic_dataset, train_f0_toy
    if args.data == "synthetic":
        dataset = synthetic_dataset(args.clips, seed=args.seed)
    else:
        try:
            dataset = load_dataset_dir(_existing(args.data))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    cfg = PipelineConfig()
    cfg.train.seed = args.seed
    cfg.train.dtype = args.dtype
    if args.lr is not None:
        cfg.optimizer.lr = args.lr
    try:
        result = train_f0_toy(dataset, cfg, out_dir=args.out, steps=args.steps,
                              resume=args.resume, log=print)
    except TrainingDiverged as exc:
        print(f"error: {exc}: {json.dumps(exc.report)}", file=sys.stderr)
        return EXIT_FAILED
    print(json.dumps(result.to_dict(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mbexwn", description="Vocoder signal-chain tools (24 kHz mono).")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="log-mel features of a WAV file")
    a.add_argument("input")
    a.add_argument("--mel", required=True, help="output .mbxm file")
    a.add_argument("--csv", help="optional CSV dump of the same features")
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("excite", help="wavetable excitation from an F0 CSV")
    e.add_argument("f0")
    e.add_argument("-o", "--output", required=True)
    e.add_argument("--duration", type=float, help="seconds (default: up to the last F0 row)")
    e.add_argument("--level", type=float, default=0.5, help="output peak level")
    e.set_defaults(func=cmd_excite)

    r = sub.add_parser("resynth", help="oracle resynthesis of a WAV file")
    r.add_argument("input")
    r.add_argument("--f0", required=True)
    r.add_argument("-o", "--output", required=True)
    r.add_argument("--report", help="JSON report path")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_resynth)

    v = sub.add_parser("eval", help="reconstruction loss and mel distance between two WAVs")
    v.add_argument("reference")
    v.add_argument("generated")
    v.add_argument("--json", nargs="?", const="-", help="write JSON (to stdout without a path)")
    v.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of the op registry")
    g.add_argument("--op", action="append", help="op name (repeatable); default: all")
    g.add_argument("--instances", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--json", help="write results as JSON")
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train-f0", help="toy F0 predictor training")
    t.add_argument("data", help="directory of name.wav/name.csv pairs, or 'synthetic'")
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--out", default="runs/f0")
    t.add_argument("--resume", help="checkpoint base path to continue from")
    t.add_argument("--clips", type=int, default=20, help="synthetic dataset size")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    t.add_argument("--lr", type=float)
    t.set_defaults(func=cmd_train_f0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
