"""Training objectives: masked F0 error and multi-resolution spectral reconstruction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .spectral import SAMPLERATE, StftParams, stft

# (window seconds, hop seconds)
RESOLUTIONS = ((0.02, 0.00375), (0.0375, 0.0075), (0.075, 0.015))
LOG_FLOOR = 1e-5
VOICED_GUARD_S = 0.050
UNVOICED_GUARD_S = 0.020


@dataclass
class VoicedMask:
    """``core``: unambiguously voiced (K); ``voiced_boundary``/``unvoiced_boundary``: B_v, B_u."""

    core: np.ndarray
    voiced_boundary: np.ndarray
    unvoiced_boundary: np.ndarray

    @property
    def boundary(self) -> np.ndarray:
        return self.voiced_boundary | self.unvoiced_boundary

    def __len__(self) -> int:
        return len(self.core)


def _boundary_distance(voicing: np.ndarray) -> np.ndarray:
    """Samples to the nearest flip, counting the sample itself (adjacent samples -> 1)."""
    n = len(voicing)
    flips = np.flatnonzero(voicing[1:] != voicing[:-1]) + 1
    if flips.size == 0:
        return np.full(n, np.inf)
    i = np.arange(n)
    pos = np.searchsorted(flips, i, side="right")
    nxt = np.where(pos < flips.size, flips[np.minimum(pos, flips.size - 1)] - i, np.inf)
    prv = np.where(pos > 0, i - flips[np.maximum(pos - 1, 0)] + 1, np.inf)
    return np.minimum(nxt, prv)


def build_voiced_mask(voicing, samplerate: int = SAMPLERATE,
                      voiced_guard_s: float = VOICED_GUARD_S,
                      unvoiced_guard_s: float = UNVOICED_GUARD_S) -> VoicedMask:
    voicing = np.asarray(voicing, bool)
    d = _boundary_distance(voicing)
    nv = round(voiced_guard_s * samplerate)
    nu = round(unvoiced_guard_s * samplerate)
    return VoicedMask(core=voicing & (d > nv),
                      voiced_boundary=voicing & (d <= nv),
                      unvoiced_boundary=~voicing & (d <= nu))


def f0_loss(target, predicted, mask) -> Tensor:
    """Mean absolute F0 error (Hz) over the unambiguously voiced samples."""
    core = mask.core if isinstance(mask, VoicedMask) else np.asarray(mask, bool)
    tgt = np.asarray(target.values.data if hasattr(target, "values") else
                     (target.data if isinstance(target, Tensor) else target), dtype=np.float64)
    pred = predicted.values if hasattr(predicted, "values") else ad.as_tensor(predicted)
    if tgt.shape != pred.shape or core.shape[-1] != pred.shape[-1]:
        raise ValueError("target, prediction and mask must have equal lengths")
    core = np.broadcast_to(core, pred.shape)
    count = int(core.sum())
    if count == 0:
        raise ValueError("no unambiguously voiced samples in mask")
    err = ad.tabs(pred - tgt) * core
    return err.sum() * (1.0 / count)


def resolution_params(samplerate: int = SAMPLERATE, resolutions=RESOLUTIONS) -> list[StftParams]:
    out = []
    for win_s, hop_s in resolutions:
        win = int(round(win_s * samplerate))
        out.append(StftParams.hann(win, int(round(hop_s * samplerate))))
    return out


@dataclass
class LossReport:
    total: Tensor
    per_resolution: list = field(default_factory=list)   # [(L_A, L_L), ...] as Tensors
    f0_loss: Tensor | None = None

    @property
    def linear_terms(self) -> list[float]:
        return [float(a.data) for a, _ in self.per_resolution]

    @property
    def log_terms(self) -> list[float]:
        return [float(b.data) for _, b in self.per_resolution]

    def to_dict(self) -> dict:
        d = {
            "L_R": float(self.total.data),
            "resolutions": [{"L_A": a, "L_L": b} for a, b in zip(self.linear_terms, self.log_terms)],
        }
        if self.f0_loss is not None:
            d["L_F0"] = float(self.f0_loss.data)
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def spectral_terms(target, generated, params: StftParams, floor: float = LOG_FLOOR):
    """Normalised linear magnitude distance and mean absolute log-magnitude distance."""
    s = stft(target, params).magnitude()
    s_hat = stft(generated, params).magnitude()
    lin = ad.sqrt(((s - s_hat) ** 2).sum()) / ad.sqrt((s ** 2).sum())
    log = ad.tabs(ad.log(ad.clamp_min(s, floor)) - ad.log(ad.clamp_min(s_hat, floor))).mean()
    return lin, log


def spectral_recon_loss(target, generated, samplerate: int = SAMPLERATE,
                        resolutions=RESOLUTIONS, floor: float = LOG_FLOOR) -> LossReport:
    """Mean over STFT resolutions of ``L_A + L_L``."""
    target, generated = ad.as_tensor(target), ad.as_tensor(generated)
    if target.shape != generated.shape:
        raise ValueError("target and generated must have equal lengths")
    terms = [spectral_terms(target, generated, p, floor) for p in resolution_params(samplerate, resolutions)]
    total = terms[0][0] + terms[0][1]
    for lin, log in terms[1:]:
        total = total + lin + log
    return LossReport(total * (1.0 / len(terms)), terms)
