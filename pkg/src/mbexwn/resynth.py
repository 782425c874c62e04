"""Oracle resynthesis: the excitation/envelope chain driven by analysed features.

No trained network is involved. The envelope is the liftered real cepstrum of
the input, the excitation is wavetable playback plus noise, and the output is
energy matched frame by frame to the input.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .audio import AudioBuffer
from .config import PipelineConfig
from .spectral import Spectrogram, conditioning_params, istft_overlap_add, mel_spectrogram, stft
from .voicing import annotate_voicing
from .vtf import apply_vtf, cepstral_envelope_of
from .wavetable import F0Contour, WavetableBank, build_table_bank, synthesize_excitation

DB_PER_NEPER = 20.0 / np.log(10.0)
ENVELOPE_ITERATIONS = 30


@dataclass
class ResynthReport:
    n_samples: int
    seconds: float
    samples_per_second: float
    mel_mae_db: float
    voiced_fraction: float

    def to_dict(self) -> dict:
        return asdict(self)


def bank_from_config(cfg: PipelineConfig) -> WavetableBank:
    w = cfg.wavetable
    return build_table_bank(cfg.mel.samplerate, w.table_size, w.f0_min, w.f0_max, w.num_tables, w.margin)


def _harmonic_cutoff(f0_frames: np.ndarray, bank: WavetableBank) -> np.ndarray:
    """Highest frequency carried by the wavetable excitation in each frame."""
    f = np.clip(f0_frames, bank.f0_ranges[0, 0], bank.f0_ranges[-1, 1])
    j = np.clip(np.searchsorted(bank.centers, f, side="right") - 1, 0, bank.num_tables - 1)
    # the upper table of a crossfade has fewer harmonics, so use the lower one's count
    return np.where(f0_frames > 0, bank.harmonics[j] * f, 0.0)


def mixed_excitation(f0: np.ndarray, voicing: np.ndarray, bank: WavetableBank,
                     rng: np.random.Generator, params=None) -> np.ndarray:
    """Wavetable pulses in voiced frames, white noise elsewhere.

    Above the pulse's highest harmonic the voiced frames are filled with noise
    at the pulse's mean spectral density, so the envelope has something to
    shape across the whole band.
    """
    params = params or conditioning_params()
    n = len(f0)
    gated = np.where(voicing, f0, 0.0)
    harm = synthesize_excitation(F0Contour(ad.Tensor(gated, dtype=np.float64)), bank).data
    noise = rng.standard_normal(n)
    H = stft(ad.Tensor(harm, dtype=np.float64), params).values.data
    N = stft(ad.Tensor(noise, dtype=np.float64), params).values.data
    frame_pos = np.minimum(np.arange(H.shape[0]) * params.hop_size, n - 1)
    f_frames = gated[frame_pos]
    freqs = np.fft.rfftfreq(params.fft_size, 1.0 / bank.samplerate)
    cutoff = _harmonic_cutoff(f_frames, bank)
    below = freqs[None, :] < cutoff[:, None]
    voiced = f_frames > 0
    p_harm = (np.abs(H) ** 2 * below).sum(-1) / np.maximum(below.sum(-1), 1)
    p_noise = np.mean(np.abs(N) ** 2, axis=-1)
    scale = np.where(voiced, np.sqrt(p_harm / np.maximum(p_noise, 1e-20)), 1.0)
    fill = np.where(voiced[:, None], ~below, True) * scale[:, None]
    spec = Spectrogram(ad.Tensor(H + N * fill, dtype=np.float64), params, bank.samplerate, n)
    return istft_overlap_add(spec, n).data


def _frame_rms(x: np.ndarray, params) -> np.ndarray:
    mag = np.abs(stft(ad.Tensor(x, dtype=np.float64), params).values.data)
    return np.sqrt(np.mean(mag ** 2, axis=-1))


def frame_gain(y: np.ndarray, ref: np.ndarray, params=None, floor: float = 1e-9) -> np.ndarray:
    """Per-sample gain, linear between frame centres, that maps ``y``'s frame RMS onto ``ref``'s."""
    params = params or conditioning_params()
    gain = _frame_rms(ref, params) / np.maximum(_frame_rms(y, params), floor)
    centres = np.arange(len(gain)) * params.hop_size
    return np.interp(np.arange(len(y)), centres, gain)


def match_frame_energy(y: np.ndarray, ref: np.ndarray, params=None) -> np.ndarray:
    return y * frame_gain(y, ref, params)


def mel_distance_db(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference of two log-mel spectrograms, in dB."""
    la = mel_spectrogram(ad.Tensor(a, dtype=np.float64)).numpy()
    lb = mel_spectrogram(ad.Tensor(b, dtype=np.float64)).numpy()
    return float(np.mean(np.abs(la - lb)) * DB_PER_NEPER)


def oracle_resynthesize(audio: AudioBuffer, f0: F0Contour | np.ndarray, cfg: PipelineConfig | None = None,
                        seed: int | None = None) -> tuple[AudioBuffer, ResynthReport]:
    cfg = cfg or PipelineConfig()
    x = audio.samples
    contour = f0 if isinstance(f0, F0Contour) else F0Contour(ad.Tensor(np.asarray(f0, dtype=np.float64)))
    f = np.asarray(contour.values.data, dtype=np.float64)
    if f.shape != x.shape:
        raise ValueError(f"F0 has {f.size} samples, audio has {x.size}")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = conditioning_params()
    voicing = contour.voiced() & annotate_voicing(x, f, audio.samplerate)
    bank = bank_from_config(cfg)
    exc = mixed_excitation(f, voicing, bank, rng, params)
    frame_f0 = np.where(voicing, f, 0.0)[np.minimum(np.arange(params.num_frames(len(x))) * params.hop_size,
                                                    len(x) - 1)]
    env = cepstral_envelope_of(x, params, cfg.n_ceps, iterations=ENVELOPE_ITERATIONS,
                               f0_frames=frame_f0, samplerate=audio.samplerate)
    y = apply_vtf(ad.Tensor(exc, dtype=np.float64), env, params).data
    y = match_frame_energy(y, x, params)
    elapsed = time.perf_counter() - t0
    report = ResynthReport(
        n_samples=len(x), seconds=elapsed, samples_per_second=len(x) / max(elapsed, 1e-9),
        mel_mae_db=mel_distance_db(x, y), voiced_fraction=float(voicing.mean()))
    return AudioBuffer(y, audio.samplerate), report
