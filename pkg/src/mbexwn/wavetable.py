"""Band-limited wavetable excitation driven by an audio-rate F0 contour.

Each table holds one period of a zero-phase, flat-spectrum pulse. Table ``t``
is read with a non-quantised, linearly interpolated phase so that gradients
reach the F0 values; two neighbouring tables are crossfaded linearly in log-F0
between their range centres.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

F0_MIN = 45.0
F0_MAX = 1400.0
NUM_TABLES = 5
TABLE_SIZE = 4096
ALIAS_MARGIN = 0.9


@dataclass(frozen=True)
class WavetableBank:
    tables: np.ndarray          # [num_tables, table_size]
    f0_ranges: np.ndarray       # [num_tables, 2], [lo, hi) in Hz
    harmonics: np.ndarray       # highest harmonic stored in each table
    samplerate: int
    table_size: int

    @property
    def num_tables(self) -> int:
        return self.tables.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return np.sqrt(self.f0_ranges[:, 0] * self.f0_ranges[:, 1])

    @property
    def max_playback(self) -> np.ndarray:
        """Highest F0 at which each table receives a nonzero crossfade weight."""
        c = self.centers
        return np.append(c[1:], self.f0_ranges[-1, 1])


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def build_table_bank(samplerate: int = 24000, table_size: int = TABLE_SIZE,
                     f0_min: float = F0_MIN, f0_max: float = F0_MAX,
                     num_tables: int = NUM_TABLES, margin: float = ALIAS_MARGIN) -> WavetableBank:
    """Design ``num_tables`` log-spaced F0 ranges and their band-limited pulses.

    A table's harmonic count is limited by the highest F0 it is ever played at
    (the next range centre, because of the crossfade), times ``margin``.
    """
    if not _is_pow2(table_size) or table_size < 512:
        raise ValueError("table_size must be a power of two >= 512")
    if not (0 < f0_min < f0_max <= samplerate / 4):
        raise ValueError("need 0 < f0_min < f0_max <= samplerate/4")
    if num_tables < 1:
        raise ValueError("num_tables must be positive")
    edges = np.geomspace(f0_min, f0_max, num_tables + 1)
    ranges = np.stack([edges[:-1], edges[1:]], axis=1)
    centers = np.sqrt(ranges[:, 0] * ranges[:, 1])
    top = np.append(centers[1:], f0_max)
    harmonics = np.floor(samplerate / 2 * margin / top).astype(int)
    if np.any(harmonics < 1):
        raise ValueError("F0 range leaves a table without any harmonic below Nyquist")
    harmonics = np.minimum(harmonics, table_size // 2 - 1)
    tables = np.zeros((num_tables, table_size))
    for t, h in enumerate(harmonics):
        spectrum = np.zeros(table_size // 2 + 1)
        spectrum[1:h + 1] = 1.0
        pulse = np.fft.irfft(spectrum, n=table_size)
        pulse -= pulse.mean()
        tables[t] = pulse / np.sqrt(np.mean(pulse ** 2))
    return WavetableBank(tables, ranges, harmonics, samplerate, table_size)


@dataclass
class F0Contour:
    """Audio-rate F0 in Hz (0 where unvoiced) plus an optional voicing flag."""

    values: Tensor
    voicing: np.ndarray | None = None

    def __post_init__(self):
        self.values = ad.as_tensor(self.values)

    def voiced(self) -> np.ndarray:
        v = np.asarray(self.values.data) > 0
        if self.voicing is not None:
            v &= np.asarray(self.voicing, bool)
        return v


def _as_contour(f0) -> F0Contour:
    return f0 if isinstance(f0, F0Contour) else F0Contour(f0)


def _phase_np(f: np.ndarray, bank: WavetableBank) -> np.ndarray:
    if np.any(f < 0):
        raise ValueError("negative F0")
    return bank.table_size * np.mod(np.cumsum(f, dtype=np.float64) / bank.samplerate, 1.0)


def phase_positions(f0, bank: WavetableBank) -> Tensor:
    """Fractional table positions ``table_size * (cumsum(F / R) mod 1)``."""
    f = np.asarray(_as_contour(f0).values.data, dtype=np.float64)
    if f.ndim != 1 or f.size < 1:
        raise ValueError("F0 contour must be a non-empty 1-D array")
    return Tensor(_phase_np(f, bank), dtype=np.float64)


def _crossfade(f: np.ndarray, bank: WavetableBank):
    """Lower table index, weight of the upper table and d(weight)/dF."""
    n = bank.num_tables
    if n == 1:
        zeros = np.zeros_like(f)
        return np.zeros(f.shape, int), zeros, zeros
    c = bank.centers
    step = np.log(c[1] / c[0])
    safe = np.where(f > 0, f, c[0])
    s = np.log(safe / c[0]) / step
    j = np.clip(np.floor(s), 0, n - 2).astype(int)
    frac = s - j
    a = np.clip(frac, 0.0, 1.0)
    da = np.where((frac > 0) & (frac < 1), 1.0 / (step * safe), 0.0)
    return j, a, da


def _read(bank: WavetableBank, table: np.ndarray, pos: np.ndarray):
    base = np.floor(pos)
    frac = pos - base
    i0 = base.astype(int) % bank.table_size
    i1 = (i0 + 1) % bank.table_size
    v0 = bank.tables[table, i0]
    slope = bank.tables[table, i1] - v0
    return v0 + frac * slope, slope


def _forward(f: np.ndarray, voiced: np.ndarray, bank: WavetableBank):
    pos = _phase_np(f, bank)
    j, a, da = _crossfade(f, bank)
    lo, slope_lo = _read(bank, j, pos)
    hi, slope_hi = _read(bank, np.minimum(j + 1, bank.num_tables - 1), pos)
    gate = voiced.astype(np.float64)
    out = gate * ((1 - a) * lo + a * hi)
    d_direct = gate * (hi - lo) * da
    d_pos = gate * ((1 - a) * slope_lo + a * slope_hi)
    return out, d_direct, d_pos


def excitation_vjp(f0, bank: WavetableBank, seed) -> np.ndarray:
    """Gradient of ``<seed, synthesize_excitation(f0)>`` with respect to the F0 values.

    Three paths contribute: the crossfade weight's dependence on ``F_k``, the
    table slope at ``P_k``, and the running phase sum, through which ``F_i``
    moves every later position ``P_k`` (k >= i) by ``table_size / R``.
    """
    contour = _as_contour(f0)
    f = np.asarray(contour.values.data, dtype=np.float64)
    seed = np.asarray(seed.data if isinstance(seed, Tensor) else seed, dtype=np.float64)
    _, d_direct, d_pos = _forward(f, contour.voiced(), bank)
    through_phase = np.cumsum((seed * d_pos)[::-1])[::-1] * (bank.table_size / bank.samplerate)
    return seed * d_direct + through_phase


def synthesize_excitation(f0, bank: WavetableBank) -> Tensor:
    """Crossfaded wavetable playback; zero wherever the contour is unvoiced."""
    contour = _as_contour(f0)
    f = np.asarray(contour.values.data, dtype=np.float64)
    if f.ndim != 1:
        raise ValueError("F0 contour must be 1-D")
    voiced = contour.voiced()
    out, d_direct, d_pos = _forward(f, voiced, bank)
    scale = bank.table_size / bank.samplerate

    def vjp(g):
        g = np.asarray(g, dtype=np.float64)
        return (g * d_direct + np.cumsum((g * d_pos)[::-1])[::-1] * scale,)

    return ad.record_op("wavetable", out, (contour.values,), vjp)
