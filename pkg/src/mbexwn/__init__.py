"""Differentiable signal-chain components for a multi-band excitation WaveNet vocoder."""

from .audio import AudioBuffer, read_wav, write_wav
from .autodiff import Tape, Tensor, grad_check
from .config import PipelineConfig
from .pqmf import analyze, design_pqmf, synthesize
from .spectral import mel_spectrogram, stft
from .vtf import CepstralEnvelope, apply_vtf, min_phase_envelope
from .wavetable import F0Contour, build_table_bank, synthesize_excitation

__version__ = "0.1.0"
