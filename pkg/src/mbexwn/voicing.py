"""Voiced/unvoiced annotation from a deterministic/noise energy split.

The split is a harmonic comb: STFT bins within 1.5 bins of a multiple of the
local F0 count as deterministic, everything else as noise. Energies are pooled
over four F0 periods around each sample and a sample is unvoiced when more
than half of the pooled energy is noise.
"""

from __future__ import annotations

import numpy as np

from .spectral import SAMPLERATE

WINDOW = 2048
HOP = 120
COMB_HALF_WIDTH = 1.5     # bins
N_PERIODS = 4
NOISE_THRESHOLD = 0.5


def _frame_energies(x: np.ndarray, f0: np.ndarray, samplerate: int):
    pad = WINDOW // 2
    xp = np.pad(x, (pad, pad))
    n_frames = 1 + len(x) // HOP
    centers = np.minimum(np.arange(n_frames) * HOP, len(x) - 1)
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(WINDOW) / WINDOW)
    idx = centers[:, None] + np.arange(WINDOW)[None, :]
    power = np.abs(np.fft.rfft(xp[idx] * win, axis=-1)) ** 2
    freqs = np.fft.rfftfreq(WINDOW, 1 / samplerate)
    bin_hz = samplerate / WINDOW
    fc = f0[centers]
    safe = np.where(fc > 0, fc, 1.0)[:, None]
    k = np.round(freqs[None, :] / safe)
    harmonic = (k >= 1) & (np.abs(freqs[None, :] - k * safe) <= COMB_HALF_WIDTH * bin_hz)
    harmonic &= (fc > 0)[:, None]
    total = power.sum(-1)
    det = (power * harmonic).sum(-1)
    return centers, det, total


def noise_ratio(x, f0, samplerate: int = SAMPLERATE) -> np.ndarray:
    """Per-sample noise/total energy ratio (1 where F0 is 0 or the signal is silent)."""
    x = np.asarray(x, dtype=np.float64)
    f0 = np.asarray(f0, dtype=np.float64)
    if x.shape != f0.shape:
        raise ValueError("F0 must be given at audio rate")
    centers, det, total = _frame_energies(x, f0, samplerate)
    cdet = np.concatenate([[0.0], np.cumsum(det)])
    ctot = np.concatenate([[0.0], np.cumsum(total)])
    n = np.arange(len(x))
    half = np.where(f0 > 0, N_PERIODS / 2 * samplerate / np.where(f0 > 0, f0, 1.0), 0.0)
    lo = np.searchsorted(centers, n - half, side="left")
    hi = np.searchsorted(centers, n + half, side="right")
    nearest = np.minimum(np.round(n / HOP).astype(int), len(centers) - 1)
    empty = hi <= lo
    lo = np.where(empty, nearest, lo)
    hi = np.where(empty, nearest + 1, hi)
    tot = ctot[hi] - ctot[lo]
    d = cdet[hi] - cdet[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(tot > 0, 1.0 - d / tot, 1.0)
    return np.where(f0 > 0, ratio, 1.0)


def annotate_voicing(x, f0, samplerate: int = SAMPLERATE) -> np.ndarray:
    """Boolean per-sample voicing: F0 > 0 and noise energy at most half of the total."""
    return noise_ratio(x, f0, samplerate) <= NOISE_THRESHOLD
