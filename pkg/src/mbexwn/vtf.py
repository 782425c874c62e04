"""Zero-gain minimum-phase spectral envelopes from causal cepstra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .spectral import StftParams, istft_overlap_add, stft

N_CEPS = 160


@dataclass
class CepstralEnvelope:
    """Causal cepstral coefficients for quefrencies 1..n_ceps (c0 is implied 0)."""

    coeffs: Tensor      # [frames, n_ceps]
    fft_size: int = 1024

    def __post_init__(self):
        self.coeffs = ad.as_tensor(self.coeffs)
        if self.coeffs.ndim != 2:
            raise ValueError("coeffs must be [frames, n_ceps]")

    @property
    def n_ceps(self) -> int:
        return self.coeffs.shape[1]

    @property
    def n_frames(self) -> int:
        return self.coeffs.shape[0]


def zero_gain_project(raw, fft_size: int = 1024) -> CepstralEnvelope:
    """Drop the quefrency-0 column of ``[frames, n_ceps + 1]`` predictions."""
    raw = ad.as_tensor(raw)
    return CepstralEnvelope(raw[:, 1:], fft_size)


def min_phase_envelope(env: CepstralEnvelope) -> Tensor:
    """Complex ``exp(rfft(folded cepstrum))``, ``[frames, fft_size/2 + 1]``.

    The causal sequence is folded as ``c~_n = 2 c_n`` for ``0 < n < N/2`` and
    ``c~_{N/2} = c_{N/2}``, with ``c~_0 = 0``.
    """
    n, nfft = env.n_ceps, env.fft_size
    if nfft < 2 * n:
        raise ValueError(f"fft_size {nfft} too small for {n} cepstral coefficients")
    weight = np.full(n, 2.0)
    if n == nfft // 2:
        weight[-1] = 1.0
    folded = ad.pad(env.coeffs * weight, ((0, 0), (1, nfft - 1 - n)))
    return ad.exp(ad.rfft(folded, n=nfft))


def log_magnitude_mean(envelope: np.ndarray) -> np.ndarray:
    """Per-frame mean of ``log|H|`` over the full (two-sided) frequency circle."""
    logmag = np.log(np.abs(np.asarray(envelope)))
    w = np.full(logmag.shape[-1], 2.0)
    w[0] = w[-1] = 1.0
    return (logmag * w).sum(-1) / w.sum()


def apply_vtf(excitation, env: CepstralEnvelope, params: StftParams) -> Tensor:
    """Filter ``excitation`` by the envelope through STFT-domain multiplication."""
    x = ad.as_tensor(excitation)
    spec = stft(x, params)
    if spec.values.shape[0] != env.n_frames:
        raise ValueError(f"envelope has {env.n_frames} frames, STFT has {spec.values.shape[0]}")
    if env.fft_size != params.fft_size:
        raise ValueError("envelope fft_size must match the STFT")
    spec.values = spec.values * min_phase_envelope(env)
    return istft_overlap_add(spec, x.shape[0])


def cepstral_envelope_of(signal, params: StftParams, n_ceps: int = N_CEPS,
                         floor: float = 1e-8, iterations: int = 0,
                         tolerance_db: float = 1.0, f0_frames=None,
                         samplerate: int = 24000) -> CepstralEnvelope:
    """Liftered real cepstrum of each STFT frame (non-differentiable helper).

    With ``iterations > 0`` the log spectrum is repeatedly replaced by
    ``max(log|X|, current envelope)`` and re-liftered, which pulls the envelope
    up onto the harmonic peaks instead of the peak/valley average.

    ``f0_frames`` (Hz per frame, 0 = unvoiced) does two things in voiced
    frames: the log spectrum below the first harmonic is held at that
    harmonic's peak level, and the lifter order drops to ``R / (2 F0)`` when
    that is below ``n_ceps``. Without the hold the empty region under F0 makes
    the lifter overshoot. Without the order cap the envelope resolves the
    inter-harmonic valleys and stops passing through the peaks.
    """
    x = np.asarray(signal.data if isinstance(signal, Tensor) else signal, dtype=np.float64)
    mag = np.abs(stft(Tensor(x, dtype=np.float64), params).values.data)
    logmag = np.log(np.maximum(mag, floor))
    order = np.full(logmag.shape[0], n_ceps)
    if f0_frames is not None:
        f0_frames = np.asarray(f0_frames, dtype=np.float64)
        logmag = _hold_below_f0(logmag, f0_frames, params.fft_size, samplerate)
        voiced = f0_frames > 0
        cap = np.floor(samplerate / (2 * np.where(voiced, f0_frames, 1.0))).astype(int)
        order = np.where(voiced, np.clip(cap, 1, n_ceps), n_ceps)
    target = logmag
    ceps = _lifter(target, params.fft_size, order)
    tol = tolerance_db / (20.0 / np.log(10.0))
    for _ in range(iterations):
        smooth = np.fft.rfft(ceps, axis=-1).real
        if np.max(logmag - smooth) < tol:
            break
        target = np.maximum(target, smooth)
        ceps = _lifter(target, params.fft_size, order)
    return CepstralEnvelope(Tensor(ceps[:, 1:n_ceps + 1], dtype=np.float64),
                            params.fft_size)


def _lifter(logmag: np.ndarray, fft_size: int, order) -> np.ndarray:
    """Real cepstrum with quefrencies above ``order`` (per frame, both sides) zeroed."""
    c = np.fft.irfft(logmag, n=fft_size, axis=-1)
    q = np.minimum(np.arange(fft_size), fft_size - np.arange(fft_size))
    order = np.broadcast_to(np.asarray(order), (logmag.shape[0],))
    return np.where(q[None, :] <= order[:, None], c, 0.0)


def _hold_below_f0(logmag: np.ndarray, f0: np.ndarray, fft_size: int, samplerate: int) -> np.ndarray:
    if f0.shape != (logmag.shape[0],):
        raise ValueError("f0_frames needs one value per STFT frame")
    out = logmag.copy()
    bins = np.arange(logmag.shape[1])
    for i in np.flatnonzero(f0 > 0):
        k0 = f0[i] * fft_size / samplerate
        search = (bins >= 0.5 * k0) & (bins <= 1.5 * k0)
        if not search.any():
            continue
        peak = np.flatnonzero(search)[np.argmax(logmag[i, search])]
        out[i, :peak] = logmag[i, peak]
    return out
