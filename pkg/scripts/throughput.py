"""Samples per second of the main signal-chain stages on this machine."""

import argparse
import time

import numpy as np

from mbexwn.audio import AudioBuffer
from mbexwn.autodiff import Tensor
from mbexwn.pqmf import analyze, design_pqmf, synthesize
from mbexwn.resynth import oracle_resynthesize
from mbexwn.spectral import mel_spectrogram
from mbexwn.synth import VOWEL_FORMANTS, smooth_contour, vowel
from mbexwn.wavetable import build_table_bank, synthesize_excitation


def rate(fn, n: int, repeats: int) -> float:
    fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return n * repeats / (time.perf_counter() - t0)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seconds", type=float, default=2.0)
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args()

    n = int(args.seconds * 24000)
    f0 = smooth_contour(n, np.random.default_rng(0))
    x = vowel(f0, VOWEL_FORMANTS["a"])
    bank, pqmf = build_table_bank(), design_pqmf()
    stages = {
        "mel analysis": lambda: mel_spectrogram(x),
        "wavetable excitation": lambda: synthesize_excitation(Tensor(f0, dtype=np.float32), bank),
        "PQMF round trip": lambda: synthesize(pqmf, analyze(pqmf, x)),
        "oracle resynthesis": lambda: oracle_resynthesize(AudioBuffer(x), f0),
    }
    for name, fn in stages.items():
        print(f"{name:22s} {rate(fn, n, args.repeats):>14,.0f} samples/s")


if __name__ == "__main__":
    main()
