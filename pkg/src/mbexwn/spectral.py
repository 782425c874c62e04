"""STFT, overlap-add inverse, Slaney mel filterbank and log-mel features.

All forward paths are built from :mod:`mbexwn.autodiff` ops and are therefore
differentiable with respect to the input signal.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SAMPLERATE = 24000
N_MELS = 80
MEL_FLOOR = 1e-5


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class StftParams:
    window_size: int
    hop_size: int
    fft_size: int
    window: np.ndarray
    center_padding: bool = True

    def __post_init__(self):
        if not (0 < self.hop_size <= self.window_size <= self.fft_size):
            raise ValueError("need 0 < hop_size <= window_size <= fft_size")
        if not _is_pow2(self.fft_size):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if len(self.window) != self.window_size:
            raise ValueError("window length must equal window_size")

    @classmethod
    def hann(cls, window_size: int, hop_size: int, fft_size: int | None = None,
             center_padding: bool = True) -> "StftParams":
        if fft_size is None:
            fft_size = 1 << int(np.ceil(np.log2(window_size)))
        return cls(window_size, hop_size, fft_size, hann(window_size), center_padding)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        return self.window_size // 2 if self.center_padding else 0

    def num_frames(self, n_samples: int) -> int:
        return 1 + (n_samples + 2 * self.pad - self.window_size) // self.hop_size

    def frame_index(self, n_samples: int) -> np.ndarray:
        """Sample index of every (frame, tap), with reflection at the edges."""
        if self.center_padding and n_samples <= self.pad:
            raise ValueError(f"signal of {n_samples} samples too short for reflection padding")
        if n_samples + 2 * self.pad < self.window_size:
            raise ValueError(f"signal of {n_samples} samples shorter than window {self.window_size}")
        return _frame_index(self.window_size, self.hop_size, self.pad, n_samples)

    def check_cola(self, rtol: float = 1e-6) -> float:
        """Return the constant overlap-add sum of squared windows, or raise."""
        w2 = self.window ** 2
        acc = np.zeros(self.hop_size)
        for start in range(0, self.window_size, self.hop_size):
            seg = w2[start:start + self.hop_size]
            acc[:len(seg)] += seg
        if acc.min() <= 0 or (acc.max() - acc.min()) > rtol * acc.max():
            raise ValueError("window/hop pair violates the constant overlap-add condition")
        return float(acc.mean())


@lru_cache(maxsize=64)
def _frame_index(window_size: int, hop_size: int, pad: int, n_samples: int) -> np.ndarray:
    frames = 1 + (n_samples + 2 * pad - window_size) // hop_size
    idx = np.arange(frames)[:, None] * hop_size + np.arange(window_size)[None, :] - pad
    idx = np.where(idx < 0, -idx, idx)
    idx = np.where(idx >= n_samples, 2 * (n_samples - 1) - idx, idx)
    idx.flags.writeable = False
    return idx


def conditioning_params() -> StftParams:
    """Analysis used for the conditioning mel and the VTF multiplication (10 ms hop)."""
    return StftParams.hann(960, 240, 1024)


@dataclass
class Spectrogram:
    values: Tensor
    params: StftParams
    samplerate: int
    n_samples: int

    @property
    def shape(self):
        return self.values.shape

    def magnitude(self) -> Tensor:
        return ad.tabs(self.values)


def stft(signal, params: StftParams, samplerate: int = SAMPLERATE) -> Spectrogram:
    """Windowed short-time real FFT; output is ``[frames, fft_size/2 + 1]``."""
    x = ad.as_tensor(signal)
    if x.ndim != 1:
        raise ValueError("stft expects a 1-D signal")
    idx = params.frame_index(x.shape[0])
    frames = ad.gather(x, idx) * params.window
    return Spectrogram(ad.rfft(frames, n=params.fft_size), params, samplerate, x.shape[0])


def istft_overlap_add(spec: Spectrogram, length: int | None = None) -> Tensor:
    """Weighted overlap-add inverse of :func:`stft`.

    Frames are windowed again and normalised by the summed squared window, so a
    spectrogram produced by ``stft`` is inverted exactly.
    """
    p = spec.params
    p.check_cola()
    n = spec.n_samples if length is None else length
    n_frames = spec.values.shape[0]
    if n_frames != p.num_frames(n):
        raise ValueError(f"{n_frames} frames do not match a {n}-sample signal")
    frames = ad.irfft(spec.values, n=p.fft_size)[:, :p.window_size] * p.window
    padded_len = n + 2 * p.pad
    idx = (np.arange(n_frames)[:, None] * p.hop_size + np.arange(p.window_size)[None, :])
    wsum = np.bincount(idx.ravel(), np.broadcast_to(p.window ** 2, idx.shape).ravel(), padded_len)
    inner = wsum[p.pad:p.pad + n]
    if np.any(inner < 1e-8 * wsum.max()):
        raise ValueError("overlap-add leaves samples uncovered")
    y = ad.scatter_add(frames, idx, padded_len)[p.pad:p.pad + n]
    return y * (1.0 / inner)


# mel ------------------------------------------------------------------------

_F_SP = 200.0 / 3
_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = _MIN_LOG_HZ / _F_SP
_LOGSTEP = np.log(6.4) / 27.0


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    lin = f / _F_SP
    log = _MIN_LOG_MEL + np.log(np.maximum(f, 1e-12) / _MIN_LOG_HZ) / _LOGSTEP
    return np.where(f >= _MIN_LOG_HZ, log, lin)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    lin = _F_SP * m
    log = _MIN_LOG_HZ * np.exp(_LOGSTEP * (m - _MIN_LOG_MEL))
    return np.where(m >= _MIN_LOG_MEL, log, lin)


def mel_filterbank(samplerate: int = SAMPLERATE, fft_size: int = 1024, n_mels: int = N_MELS,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Slaney-scale triangular filters with area normalisation, ``[n_mels, bins]``."""
    fmax = samplerate / 2 if fmax is None else fmax
    fftfreqs = np.linspace(0, samplerate / 2, fft_size // 2 + 1)
    mel_f = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fdiff = np.diff(mel_f)
    ramps = mel_f[:, None] - fftfreqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0, np.minimum(lower, upper))
    weights *= (2.0 / (mel_f[2:] - mel_f[:-2]))[:, None]
    return weights


def mel_band_centers(samplerate: int = SAMPLERATE, n_mels: int = N_MELS,
                     fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    fmax = samplerate / 2 if fmax is None else fmax
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]


@dataclass
class MelSpectrogram:
    values: Tensor
    filters: np.ndarray
    floor: float
    params: StftParams
    samplerate: int

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    def numpy(self) -> np.ndarray:
        return np.asarray(self.values.data)


def mel_spectrogram(signal, samplerate: int = SAMPLERATE, params: StftParams | None = None,
                    floor: float = MEL_FLOOR) -> MelSpectrogram:
    """Natural-log mel amplitudes (80 bands) of a 24 kHz signal."""
    if samplerate != SAMPLERATE:
        raise ValueError(f"mel_spectrogram requires {SAMPLERATE} Hz input, got {samplerate}")
    params = conditioning_params() if params is None else params
    filters = _cached_filters(samplerate, params.fft_size)
    mag = stft(signal, params, samplerate).magnitude()
    mel = ad.matmul(mag, filters.T)
    return MelSpectrogram(ad.log(ad.clamp_min(mel, floor)), filters, floor, params, samplerate)


_FILTER_CACHE: dict = {}


def _cached_filters(samplerate: int, fft_size: int) -> np.ndarray:
    key = (samplerate, fft_size)
    if key not in _FILTER_CACHE:
        _FILTER_CACHE[key] = mel_filterbank(samplerate, fft_size)
    return _FILTER_CACHE[key]


# feature files ----------------------------------------------------------------

_HEADER = struct.Struct("<4sIIffI")


@dataclass
class FeatureFile:
    magic: str
    values: np.ndarray
    hop_seconds: float
    win_seconds: float
    samplerate: int


def write_features(path, values: np.ndarray, hop_seconds: float, win_seconds: float,
                   samplerate: int, magic: str = "MBXM") -> None:
    """Write ``[frames, bands]`` as the little-endian MBXM/MBXC container."""
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2 or len(magic) != 4:
        raise ValueError("expected a 2-D array and a 4-character magic")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic.encode("ascii"), values.shape[0], values.shape[1],
                              hop_seconds, win_seconds, samplerate))
        fh.write(values.tobytes())


def read_features(path, magic: str | None = None) -> FeatureFile:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    tag, frames, bands, hop, win, sr = _HEADER.unpack_from(raw)
    tag = tag.decode("ascii", errors="replace")
    if magic is not None and tag != magic:
        raise ValueError(f"{path}: expected magic {magic!r}, found {tag!r}")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if body.size != frames * bands:
        raise ValueError(f"{path}: payload has {body.size} values, header says {frames}x{bands}")
    return FeatureFile(tag, body.reshape(frames, bands).copy(), hop, win, sr)


def write_mel(path, mel: MelSpectrogram) -> None:
    p = mel.params
    write_features(path, mel.numpy(), p.hop_size / mel.samplerate,
                   p.window_size / mel.samplerate, mel.samplerate, "MBXM")


def export_csv(path, values: np.ndarray, hop_seconds: float) -> None:
    """Debug dump: one row per frame, first column the frame time."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s"] + [f"band_{i}" for i in range(values.shape[1])])
        for i, row in enumerate(values):
            w.writerow([f"{i * hop_seconds:.6f}"] + [f"{v:.6g}" for v in row])
