"""WAV and F0-CSV input/output."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

SAMPLERATE = 24000


@dataclass
class AudioBuffer:
    samples: np.ndarray
    samplerate: int = SAMPLERATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("only mono audio is supported")
        if self.samplerate != SAMPLERATE:
            raise ValueError(f"audio must be {SAMPLERATE} Hz, got {self.samplerate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.samplerate


def read_wav(path) -> AudioBuffer:
    """Read 16-bit PCM or 32-bit float mono WAV at 24 kHz."""
    try:
        sr, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise ValueError(f"{path}: cannot read WAV ({exc})") from exc
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return AudioBuffer(x, sr)


def write_wav(path, audio: AudioBuffer | np.ndarray, samplerate: int = SAMPLERATE) -> None:
    """Write 16-bit PCM without dither; samples are clipped to [-1, 1)."""
    x = audio.samples if isinstance(audio, AudioBuffer) else np.asarray(audio, dtype=np.float64)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    wavfile.write(path, samplerate, pcm)


def read_f0_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(time_s, f0_hz)`` from a ``time_s,f0_hz`` CSV (0 Hz = unvoiced)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["time_s", "f0_hz"]:
        raise ValueError(f"{path}: header must be 'time_s,f0_hz'")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:] if a.strip()], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed row ({exc})") from exc
    if data.size == 0:
        raise ValueError(f"{path}: no F0 rows")
    t, f = data[:, 0], data[:, 1]
    if np.any(np.diff(t) <= 0):
        raise ValueError(f"{path}: times must be strictly increasing")
    if np.any(f < 0):
        raise ValueError(f"{path}: negative F0")
    return t, f


def write_f0_csv(path, times: np.ndarray, f0: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "f0_hz"])
        for t, f in zip(times, f0):
            w.writerow([f"{t:.6f}", f"{f:.4f}"])


def f0_to_audio_rate(times: np.ndarray, f0: np.ndarray, n_samples: int,
                     samplerate: int = SAMPLERATE) -> np.ndarray:
    """Linear resampling onto the sample grid; voiced/unvoiced edges stay sharp.

    Interpolation only happens between two voiced anchors, otherwise the
    nearest anchor's value (possibly 0) is used.
    """
    t = np.arange(n_samples) / samplerate
    lin = np.interp(t, times, f0)
    idx = np.clip(np.searchsorted(times, t), 1, len(times) - 1) if len(times) > 1 else np.zeros(n_samples, int)
    if len(times) == 1:
        return np.full(n_samples, f0[0])
    left, right = f0[idx - 1], f0[idx]
    nearest = np.where(np.abs(t - times[idx - 1]) <= np.abs(times[idx] - t), left, right)
    both = (left > 0) & (right > 0)
    inside = (t >= times[0]) & (t <= times[-1])
    return np.where(both & inside, lin, np.where(inside, nearest, lin))
