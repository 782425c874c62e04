"""Cosine-modulated pseudo-QMF analysis/synthesis filterbank."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve
from scipy.signal.windows import kaiser

from . import autodiff as ad
from .autodiff import Tensor

NUM_BANDS = 15
TAPS = 512
KAISER_BETA = 9.0


@dataclass(frozen=True)
class PQMFBank:
    num_bands: int
    taps: int
    cutoff_ratio: float
    kaiser_beta: float
    prototype: np.ndarray           # [taps + 1]
    analysis_filters: np.ndarray    # [num_bands, taps + 1]
    synthesis_filters: np.ndarray   # [num_bands, taps + 1]
    delay_samples: int = 0          # filters are applied centred ("same" alignment)

    @property
    def cutoff(self) -> float:
        """Prototype cutoff in radians per sample."""
        return self.cutoff_ratio * np.pi / (2 * self.num_bands)


def prototype_filter(num_bands: int, taps: int, cutoff_ratio: float, kaiser_beta: float) -> np.ndarray:
    """Kaiser-windowed sinc lowpass with cutoff ``cutoff_ratio * pi / (2 * num_bands)``."""
    wc = cutoff_ratio * np.pi / (2 * num_bands)
    n = np.arange(taps + 1) - taps / 2
    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.sin(wc * n) / (np.pi * n)
    h[taps // 2] = wc / np.pi
    return h * kaiser(taps + 1, kaiser_beta)


def _modulate(proto: np.ndarray, num_bands: int, taps: int):
    n = np.arange(taps + 1) - taps / 2
    k = np.arange(num_bands)[:, None]
    phase = (2 * k + 1) * np.pi / (2 * num_bands) * n[None, :]
    offset = (-1.0) ** k * np.pi / 4
    analysis = 2 * proto * np.cos(phase + offset)
    synthesis = num_bands * analysis[:, ::-1].copy()
    return analysis, synthesis


def _same(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    c = (h.shape[-1] - 1) // 2
    return fftconvolve(x, h, axes=-1)[..., c:c + x.shape[-1]]


def _roundtrip_snr(num_bands: int, taps: int, ratio: float, beta: float, probe: np.ndarray) -> float:
    analysis, synthesis = _modulate(prototype_filter(num_bands, taps, ratio, beta), num_bands, taps)
    y = _analyze_np(analysis, num_bands, probe)
    x_hat = _synthesize_np(synthesis, num_bands, y)
    sl = slice(taps, -taps)
    err = probe[sl] - x_hat[sl]
    return 10 * np.log10(np.sum(probe[sl] ** 2) / np.sum(err ** 2))


@lru_cache(maxsize=16)
def _search_cutoff(num_bands: int, taps: int, beta: float) -> float:
    probe = np.random.default_rng(1234).normal(size=num_bands * max(2000, 4 * taps // num_bands))
    coarse = np.linspace(0.8, 1.4, 31)
    snr = [_roundtrip_snr(num_bands, taps, r, beta, probe) for r in coarse]
    best = coarse[int(np.argmax(snr))]
    fine = np.linspace(best - 0.02, best + 0.02, 21)
    snr = [_roundtrip_snr(num_bands, taps, r, beta, probe) for r in fine]
    return float(fine[int(np.argmax(snr))])


def design_pqmf(num_bands: int = NUM_BANDS, taps: int = TAPS, cutoff_ratio: float | None = None,
                kaiser_beta: float = KAISER_BETA) -> PQMFBank:
    """Build the filterbank; with ``cutoff_ratio=None`` the ratio maximising round-trip SNR is searched."""
    if num_bands < 2 or taps < 2 * num_bands or taps % 2:
        raise ValueError("need num_bands >= 2 and an even taps >= 2 * num_bands")
    if kaiser_beta < 0:
        raise ValueError("kaiser_beta must be non-negative")
    if cutoff_ratio is None:
        cutoff_ratio = _search_cutoff(num_bands, taps, float(kaiser_beta))
    if not 0 < cutoff_ratio * np.pi / (2 * num_bands) < np.pi:
        raise ValueError("cutoff outside (0, pi)")
    proto = prototype_filter(num_bands, taps, cutoff_ratio, kaiser_beta)
    analysis, synthesis = _modulate(proto, num_bands, taps)
    return PQMFBank(num_bands, taps, float(cutoff_ratio), float(kaiser_beta), proto, analysis, synthesis)


def _analyze_np(analysis: np.ndarray, m: int, x: np.ndarray) -> np.ndarray:
    return _same(np.broadcast_to(x, (m, x.shape[-1])), analysis)[:, ::m]


def _synthesize_np(synthesis: np.ndarray, m: int, sub: np.ndarray) -> np.ndarray:
    up = np.zeros((m, sub.shape[1] * m))
    up[:, ::m] = sub
    return _same(up, synthesis).sum(axis=0)


def analyze(bank: PQMFBank, signal) -> Tensor:
    """Filter and decimate; returns ``[num_bands, ceil(samples / num_bands)]``."""
    x = ad.as_tensor(signal)
    m = bank.num_bands
    if x.ndim != 1:
        raise ValueError("analyze expects a 1-D signal")
    rem = (-x.shape[0]) % m
    if rem:
        x = ad.pad(x, ((0, rem),))
    xd = np.asarray(x.data, dtype=np.float64)
    out = _analyze_np(bank.analysis_filters, m, xd)
    rev = bank.analysis_filters[:, ::-1]

    def vjp(g):
        up = np.zeros((m, xd.shape[0]))
        up[:, ::m] = np.real(g)
        return (_same(up, rev).sum(axis=0),)

    return ad.record_op("pqmf_analyze", out, (x,), vjp)


def synthesize(bank: PQMFBank, subbands) -> Tensor:
    """Upsample, filter and sum ``[num_bands, frames]`` into ``frames * num_bands`` samples."""
    s = ad.as_tensor(subbands)
    m = bank.num_bands
    if s.ndim != 2 or s.shape[0] != m:
        raise ValueError(f"subbands must be [{m}, frames]")
    sd = np.asarray(s.data, dtype=np.float64)
    out = _synthesize_np(bank.synthesis_filters, m, sd)
    rev = bank.synthesis_filters[:, ::-1]

    def vjp(g):
        g = np.broadcast_to(np.real(g), (m, g.shape[0]))
        return (_same(g, rev)[:, ::m],)

    return ad.record_op("pqmf_synthesize", out, (s,), vjp)
