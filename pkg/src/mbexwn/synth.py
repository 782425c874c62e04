"""Synthetic test material: band-limited sawtooth vowels and F0 contours."""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

SAMPLERATE = 24000
VOWEL_FORMANTS = {
    "a": ((730, 90), (1090, 110), (2440, 170)),
    "i": ((270, 60), (2290, 100), (3010, 150)),
    "u": ((300, 60), (870, 90), (2240, 150)),
    "e": ((530, 70), (1840, 100), (2480, 150)),
    "o": ((570, 80), (840, 100), (2410, 150)),
}


def sawtooth(f0: np.ndarray, samplerate: int = SAMPLERATE, phase0: float = 0.0) -> np.ndarray:
    """Additive band-limited sawtooth following an audio-rate F0 contour (0 = silent)."""
    f0 = np.asarray(f0, dtype=np.float64)
    phase = 2 * np.pi * (np.cumsum(f0) / samplerate) + phase0
    fmax = f0[f0 > 0].max() if np.any(f0 > 0) else 0.0
    out = np.zeros_like(f0)
    nyq = samplerate / 2
    for k in range(1, int(nyq / max(fmax, 1e-9) * 2) + 2 if fmax else 1):
        alive = (k * f0 < nyq) & (f0 > 0)
        if not alive.any():
            break
        out += alive * np.sin(k * phase) / k
    return out * (2 / np.pi)


def formant_filter(x: np.ndarray, formants, samplerate: int = SAMPLERATE) -> np.ndarray:
    """Cascade of two-pole resonators with unit gain at DC."""
    y = np.asarray(x, dtype=np.float64)
    for freq, bw in formants:
        r = np.exp(-np.pi * bw / samplerate)
        theta = 2 * np.pi * freq / samplerate
        a = [1.0, -2 * r * np.cos(theta), r * r]
        y = lfilter([sum(a)], a, y)
    return y


def vowel(f0: np.ndarray, formants=VOWEL_FORMANTS["a"], samplerate: int = SAMPLERATE,
          level: float = 0.3, noise: np.ndarray | None = None) -> np.ndarray:
    """Sawtooth through a 3-formant filter, peak-normalised to ``level``.

    ``noise`` (same length) is added to the source before filtering, which is
    how unvoiced stretches are produced.
    """
    src = sawtooth(f0, samplerate)
    if noise is not None:
        src = src + noise
    y = formant_filter(src, formants, samplerate)
    peak = np.max(np.abs(y))
    return y * (level / peak) if peak > 0 else y


def smooth_contour(n: int, rng: np.random.Generator, lo: float = 100.0, hi: float = 300.0,
                   samplerate: int = SAMPLERATE) -> np.ndarray:
    """Slowly varying F0: random base, glide and a few Hz of vibrato."""
    t = np.arange(n) / samplerate
    base = rng.uniform(lo, hi)
    glide = rng.uniform(-0.15, 0.15) * base * t / max(t[-1], 1e-9)
    vib = rng.uniform(0, 0.02) * base * np.sin(2 * np.pi * rng.uniform(4, 6) * t + rng.uniform(0, 2 * np.pi))
    return np.clip(base + glide + vib, lo * 0.8, hi * 1.2)


def voiced_clip(n: int, rng: np.random.Generator, gap: bool = True, samplerate: int = SAMPLERATE):
    """Return ``(audio, f0, voicing)`` for a vowel clip with an optional unvoiced gap."""
    f0 = smooth_contour(n, rng, samplerate=samplerate)
    voicing = np.ones(n, bool)
    if gap:
        width = int(rng.uniform(0.04, 0.08) * samplerate)
        start = int(rng.uniform(0.35, 0.65) * n) - width // 2
        voicing[start:start + width] = False
    f0 = np.where(voicing, f0, 0.0)
    noise = np.where(voicing, 0.0, rng.normal(scale=0.3, size=n))
    formants = VOWEL_FORMANTS["aiue"[int(rng.integers(4))]]
    return vowel(f0, formants, samplerate, noise=noise), f0, voicing
