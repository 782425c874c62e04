"""Measurement oracles used by tests, the acceptance suite and scripts."""

from __future__ import annotations

import numpy as np
from scipy.signal.windows import blackmanharris

SAMPLERATE = 24000


def dft_peak_f0(x, samplerate: int = SAMPLERATE, lo: float = 40.0, hi: float = 1500.0,
                zero_pad: int = 8) -> float:
    """Frequency of the strongest spectral peak in ``[lo, hi]``.

    Blackman-Harris window, zero padding and a parabolic fit on the log
    magnitude give sub-0.01 Hz resolution for a one-second tone.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    nfft = zero_pad * n
    mag = np.abs(np.fft.rfft(x * blackmanharris(n), nfft))
    freqs = np.fft.rfftfreq(nfft, 1.0 / samplerate)
    band = np.flatnonzero((freqs >= lo) & (freqs <= hi))
    k = band[np.argmax(mag[band])]
    a, b, c = np.log(mag[k - 1:k + 2] + 1e-300)
    denom = a - 2 * b + c
    delta = 0.5 * (a - c) / denom if denom != 0 else 0.0
    return float((k + delta) * samplerate / nfft)


def fundamental_f0(x, expected: float, samplerate: int = SAMPLERATE, search: float = 0.1) -> float:
    """DFT peak restricted to ``expected * (1 +- search)``; robust for pulse trains."""
    return dft_peak_f0(x, samplerate, expected * (1 - search), expected * (1 + search))


def alias_floor_db(x, f0: float, samplerate: int = SAMPLERATE, guard_hz: float = 6.0) -> float:
    """Energy away from the harmonic grid ``k * f0`` relative to the total, in dB.

    Anything outside ``+-guard_hz`` of a harmonic counts: aliased partials and
    interpolation images.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    power = np.abs(np.fft.rfft(x * blackmanharris(n), 4 * n)) ** 2
    freqs = np.fft.rfftfreq(4 * n, 1.0 / samplerate)
    k = np.round(freqs / f0)
    near = (np.abs(freqs - k * f0) < guard_hz) & (k > 0)
    return float(10 * np.log10(power[~near].sum() / power.sum()))


def snr_db(reference, estimate, trim: int = 0) -> float:
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    sl = slice(trim, len(reference) - trim if trim else None)
    err = reference[sl] - estimate[sl]
    return float(10 * np.log10(np.sum(reference[sl] ** 2) / np.sum(err ** 2)))


def anticausal_energy_ratio(envelope) -> np.ndarray:
    """Per frame, energy at negative quefrencies of the complex cepstrum over the total.

    ``log H`` is taken with the phase unwrapped along frequency; a minimum-phase
    ``H`` gives a purely causal complex cepstrum.
    """
    env = np.asarray(envelope)
    nfft = 2 * (env.shape[-1] - 1)
    # log H of a real filter is Hermitian, so irfft yields the (real) complex cepstrum
    log_h = np.log(np.abs(env)) + 1j * np.unwrap(np.angle(env), axis=-1)
    cc = np.fft.irfft(log_h, nfft, axis=-1)
    neg = cc[..., nfft // 2 + 1:]
    return (neg ** 2).sum(-1) / (cc ** 2).sum(-1)
