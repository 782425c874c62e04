"""Write a synthetic vowel, its F0 CSV and the oracle resynthesis to a directory.

    python3 scripts/resynth_demo.py --vowel a --f0 140 --out runs/demo
"""

import argparse
import json
from pathlib import Path

import numpy as np

from mbexwn.audio import AudioBuffer, write_f0_csv, write_wav
from mbexwn.resynth import oracle_resynthesize
from mbexwn.synth import VOWEL_FORMANTS, smooth_contour, vowel


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--vowel", choices=sorted(VOWEL_FORMANTS), default="a")
    p.add_argument("--f0", type=float, help="constant pitch in Hz (default: a random smooth contour)")
    p.add_argument("--seconds", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/demo")
    args = p.parse_args()

    n = int(args.seconds * 24000)
    rng = np.random.default_rng(args.seed)
    f0 = np.full(n, args.f0) if args.f0 else smooth_contour(n, rng)
    x = vowel(f0, VOWEL_FORMANTS[args.vowel])
    x *= 0.5 / np.max(np.abs(x))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_wav(out / "input.wav", x)
    t = np.arange(0, n, 240) / 24000
    write_f0_csv(out / "input.csv", t, f0[::240])
    y, report = oracle_resynthesize(AudioBuffer(x), f0, seed=args.seed)
    write_wav(out / "resynth.wav", y)
    print(json.dumps(report.to_dict(), indent=2))


if __name__ == "__main__":
    main()
