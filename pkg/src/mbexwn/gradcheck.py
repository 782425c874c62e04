"""Registry of differentiable ops and a finite-difference test runner.

Every entry builds a random scalar function of one input array. Array-valued
ops are reduced with a random cotangent, complex outputs with independent
cotangents on the real and imaginary parts.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import layers as L
from .autodiff import Tensor, grad_check
from .losses import f0_loss, spectral_recon_loss, spectral_terms
from .pqmf import analyze, design_pqmf, synthesize
from .spectral import StftParams, istft_overlap_add, mel_spectrogram, stft
from .vtf import CepstralEnvelope, apply_vtf, min_phase_envelope
from .wavetable import build_table_bank, synthesize_excitation

TOLERANCE = 1e-4


@dataclass
class Instance:
    f: Callable
    x: np.ndarray
    exclude: np.ndarray | None = None
    epsilon: float = 1e-5


@dataclass
class OpResult:
    name: str
    instances: int
    max_rel_err: float
    worst_instance: int
    seconds: float
    passed: bool


REGISTRY: dict[str, Callable[[np.random.Generator], Instance]] = {}


def register(name: str):
    def deco(fn):
        if name in REGISTRY:
            raise ValueError(f"duplicate op {name!r}")
        REGISTRY[name] = fn
        return fn
    return deco


def _linear(op, x, rng, **kw) -> Instance:
    seed_rng = np.random.default_rng(rng.integers(1 << 31))
    probe = op(Tensor(x))
    w = [seed_rng.standard_normal(probe.shape) for _ in range(2)]

    def f(t):
        y = op(t)
        if y.is_complex:
            return (ad.real(y) * w[0]).sum() + (ad.imag(y) * w[1]).sum()
        return (y * w[0]).sum()

    return Instance(f, x, **kw)


# core tensor ops --------------------------------------------------------------

def _pair(rng, shape=(4, 5)):
    return rng.standard_normal(shape), rng.standard_normal(shape)


@register("add")
def _(rng):
    x, c = _pair(rng)
    return _linear(lambda t: t + c, x, rng)


@register("mul")
def _(rng):
    x, c = _pair(rng)
    return _linear(lambda t: t * c * t, x, rng)


@register("div")
def _(rng):
    x, c = _pair(rng)
    c = np.abs(c) + 0.5
    return _linear(lambda t: c / (t * t + 1.0) + t / c, x, rng)


@register("power")
def _(rng):
    x = rng.uniform(0.5, 2.0, (4, 5))
    return _linear(lambda t: t ** 2.5, x, rng)


@register("matmul")
def _(rng):
    x = rng.standard_normal((4, 6))
    b = rng.standard_normal((6, 3))
    return _linear(lambda t: t @ b, x, rng)


@register("exp_log_sqrt")
def _(rng):
    x = rng.uniform(0.2, 2.0, (3, 7))
    return _linear(lambda t: ad.exp(t) + ad.log(t) + ad.sqrt(t), x, rng)


@register("abs")
def _(rng):
    x = rng.standard_normal(20)
    return _linear(ad.tabs, x, rng, exclude=np.abs(x) < 1e-3)


@register("abs_complex")
def _(rng):
    x = rng.standard_normal(16)
    return _linear(lambda t: ad.tabs(ad.rfft(t)), x, rng)


@register("clamp_min")
def _(rng):
    x = rng.standard_normal(20)
    return _linear(lambda t: ad.clamp_min(t, 0.1), x, rng, exclude=np.abs(x - 0.1) < 1e-3)


@register("relu_sigmoid_tanh")
def _(rng):
    x = rng.standard_normal(20)
    return _linear(lambda t: ad.relu(t) + ad.sigmoid(t) * ad.tanh(t), x, rng, exclude=np.abs(x) < 1e-3)


@register("complex_parts")
def _(rng):
    x = rng.standard_normal(12)
    w = rng.standard_normal(12) + 1j * rng.standard_normal(12)

    def op(t):
        z = ad.to_complex(t) * w
        return ad.real(z) * ad.imag(ad.conj(z))
    return _linear(op, x, rng)


@register("reductions")
def _(rng):
    x = rng.standard_normal((3, 4, 5))
    return _linear(lambda t: t.sum(axis=1) * t.mean(axis=(0, 2), keepdims=True).reshape((1, 4)).sum(), x, rng)


@register("reshape_transpose_index")
def _(rng):
    x = rng.standard_normal((3, 4, 5))
    return _linear(lambda t: t.transpose(2, 0, 1).reshape((5, 12))[1:4, ::2] * 2.0, x, rng)


@register("gather_scatter")
def _(rng):
    x = rng.standard_normal(15)
    idx = rng.integers(0, 15, size=(6, 4))
    return _linear(lambda t: ad.scatter_add(ad.gather(t, idx) * ad.gather(t, idx), idx, 20), x, rng)


@register("concat_stack_pad")
def _(rng):
    x = rng.standard_normal((3, 4))
    return _linear(lambda t: ad.pad(ad.stack([ad.concat([t, t * t], axis=0), ad.concat([t * 2, t], axis=0)]),
                                    ((0, 0), (1, 2), (0, 1))), x, rng)


@register("cumsum")
def _(rng):
    x = rng.standard_normal((3, 9))
    return _linear(lambda t: ad.cumsum(t * t, axis=-1), x, rng)


@register("rfft")
def _(rng):
    x = rng.standard_normal((2, 13))
    return _linear(lambda t: ad.rfft(t, n=16), x, rng)


@register("irfft")
def _(rng):
    x = rng.standard_normal((2, 9))
    w = rng.standard_normal(9)
    return _linear(lambda t: ad.irfft(ad.rfft(t * w, n=16), n=16) * ad.irfft(ad.to_complex(t), n=16), x, rng)


# signal chain -------------------------------------------------------------------

_SMALL_STFT = StftParams.hann(64, 16, 64)


@register("stft")
def _(rng):
    x = rng.standard_normal(200)
    return _linear(lambda t: stft(t, _SMALL_STFT).values, x, rng)


@register("stft_magnitude")
def _(rng):
    x = rng.standard_normal(200)
    return _linear(lambda t: stft(t, _SMALL_STFT).magnitude(), x, rng)


@register("istft")
def _(rng):
    x = rng.standard_normal(200)
    shape = stft(Tensor(x), _SMALL_STFT).values.shape
    re = rng.standard_normal(shape)

    def op(t):
        spec = stft(t, _SMALL_STFT)
        spec.values = spec.values * re
        return istft_overlap_add(spec, 200)
    return _linear(op, x, rng)


@register("mel")
def _(rng):
    x = 0.1 * rng.standard_normal(1440)
    return _linear(lambda t: mel_spectrogram(t).values, x, rng)


_BANK = None


def _bank():
    global _BANK
    if _BANK is None:
        _BANK = build_table_bank(table_size=1024)
    return _BANK


@register("wavetable")
def _(rng):
    bank = _bank()
    f0 = np.exp(rng.uniform(np.log(50), np.log(1300), size=240))
    f0 = np.convolve(f0, np.ones(40) / 40, mode="same")
    f0[rng.integers(0, 240, size=10)] = 0.0          # unvoiced samples, gated off
    near = np.min(np.abs(np.log(np.maximum(f0, 1e-9))[:, None] - np.log(bank.centers)[None, :]), 1) < 1e-4
    # F0 is O(100) Hz, so a larger step keeps round-off below the tolerance
    return _linear(lambda t: synthesize_excitation(t, bank), f0, rng, exclude=near | (f0 == 0), epsilon=1e-4)


@register("min_phase_envelope")
def _(rng):
    c = 0.1 * rng.standard_normal((3, 20)) / (1 + np.arange(20))
    return _linear(lambda t: min_phase_envelope(CepstralEnvelope(t, fft_size=64)), c, rng)


@register("apply_vtf.excitation")
def _(rng):
    x = rng.standard_normal(200)
    frames = _SMALL_STFT.num_frames(200)
    env = CepstralEnvelope(Tensor(0.2 * rng.standard_normal((frames, 24)) / (1 + np.arange(24))), 64)
    return _linear(lambda t: apply_vtf(t, env, _SMALL_STFT), x, rng)


@register("apply_vtf.cepstrum")
def _(rng):
    exc = Tensor(rng.standard_normal(200))
    frames = _SMALL_STFT.num_frames(200)
    c = 0.2 * rng.standard_normal((frames, 24)) / (1 + np.arange(24))
    return _linear(lambda t: apply_vtf(exc, CepstralEnvelope(t, 64), _SMALL_STFT), c, rng)


_PQMF = None


def _pqmf():
    global _PQMF
    if _PQMF is None:
        _PQMF = design_pqmf()
    return _PQMF


@register("pqmf.analyze")
def _(rng):
    x = rng.standard_normal(15 * 40)
    return _linear(lambda t: analyze(_pqmf(), t), x, rng)


@register("pqmf.synthesize")
def _(rng):
    s = rng.standard_normal((15, 40))
    return _linear(lambda t: synthesize(_pqmf(), t), s, rng)


# losses -------------------------------------------------------------------------

@register("f0_loss")
def _(rng):
    target = rng.uniform(80, 300, size=60)
    pred = target + rng.normal(scale=20, size=60)
    mask = rng.random(60) > 0.3
    mask[0] = True
    return Instance(lambda t: f0_loss(target, t, mask), pred, exclude=np.abs(pred - target) < 1e-3)


def _loss_pair(rng, n=2400):
    # a gain of ~2 keeps |log S - log S_hat| away from the kink of the absolute value
    tgt = rng.standard_normal(n)
    gen = rng.uniform(1.8, 2.2) * tgt + 0.01 * rng.standard_normal(n)
    return tgt, gen


@register("loss.linear")
def _(rng):
    tgt, gen = _loss_pair(rng, 400)
    p = StftParams.hann(64, 16)
    return Instance(lambda t: spectral_terms(tgt, t, p)[0], gen)


@register("loss.log")
def _(rng):
    tgt, gen = _loss_pair(rng, 400)
    p = StftParams.hann(64, 16)
    return Instance(lambda t: spectral_terms(tgt, t, p)[1], gen)


@register("loss.recon")
def _(rng):
    tgt, gen = _loss_pair(rng)
    return Instance(lambda t: spectral_recon_loss(tgt, t).total, gen)


# layers -------------------------------------------------------------------------

@register("conv1d.input")
def _(rng):
    x = rng.standard_normal((2, 9, 3))
    w = rng.standard_normal((3, 3, 4))
    b = rng.standard_normal(4)
    return _linear(lambda t: L.conv1d(t, w, b), x, rng)


@register("conv1d.weights")
def _(rng):
    x = rng.standard_normal((2, 9, 3))
    w = rng.standard_normal((5, 3, 2))
    return _linear(lambda t: L.conv1d(x, t, dilation=2), w, rng)


@register("reshape_up_down")
def _(rng):
    x = rng.standard_normal((2, 6, 4))
    return _linear(lambda t: L.reshape_downsample(L.reshape_upsample(t, 2) * 3.0, 3), x, rng)


@register("linear_upsample")
def _(rng):
    x = rng.standard_normal((2, 5, 3))
    return _linear(lambda t: L.linear_upsample(t, 4), x, rng)


@register("resample_linear")
def _(rng):
    x = rng.standard_normal(30)
    return _linear(lambda t: L.resample_linear(t, 70, 1 / 2.4), x, rng)


@register("gated_block")
def _(rng):
    x = rng.standard_normal((1, 8, 4))
    cond = rng.standard_normal((1, 8, 2))
    p = {"filter_w": rng.standard_normal((3, 4, 4)) * 0.5, "gate_w": rng.standard_normal((3, 4, 4)) * 0.5,
         "filter_b": rng.standard_normal(4), "gate_b": rng.standard_normal(4),
         "res_w": rng.standard_normal((1, 4, 4)), "skip_w": rng.standard_normal((1, 4, 4)),
         "cond_f": rng.standard_normal((1, 2, 4)), "cond_g": rng.standard_normal((1, 2, 4))}

    def op(t):
        r, s = L.gated_block(t, p, dilation=2, cond=cond)
        return r * s
    return _linear(op, x, rng)


@register("f0_net")
def _(rng):
    net = L.build_f0_net("C:3x8, C:3x6x2, C:1x3, L:2", in_channels=5,
                         seed=int(rng.integers(1 << 30)), dtype="float64")
    x = rng.standard_normal((1, 4, 5))
    return _linear(net, x, rng)


@register("vtf_net")
def _(rng):
    net = L.build_vtf_net("C:3x8, C:1x12", in_channels=5, seed=int(rng.integers(1 << 30)), dtype="float64")
    x = rng.standard_normal((1, 6, 5))
    return _linear(net, x, rng)


@register("wavenet")
def _(rng):
    net = L.build_wavenet(in_channels=3, channels=4, out_channels=2, cond_channels=2, blocks=1,
                          layers_per_block=2, seed=int(rng.integers(1 << 30)), dtype="float64")
    x = rng.standard_normal((1, 8, 3))
    cond = rng.standard_normal((1, 8, 2))
    return _linear(lambda t: net(t, cond), x, rng)


# runner -------------------------------------------------------------------------

def check_op(name: str, instances: int = 10, seed: int = 0, tolerance: float = TOLERANCE) -> OpResult:
    if name not in REGISTRY:
        raise KeyError(f"unknown op {name!r}; known: {', '.join(sorted(REGISTRY))}")
    t0 = time.perf_counter()
    worst, worst_i = 0.0, -1
    for i in range(instances):
        rng = np.random.default_rng([seed, i, sum(map(ord, name))])
        inst = REGISTRY[name](rng)
        report = grad_check(inst.f, inst.x, inst.epsilon, exclude=inst.exclude, rng=rng)
        if report.max_rel_err >= worst:
            worst, worst_i = report.max_rel_err, i
    return OpResult(name, instances, worst, worst_i, time.perf_counter() - t0, worst < tolerance)


def run_suite(names=None, instances: int = 10, seed: int = 0, tolerance: float = TOLERANCE) -> list[OpResult]:
    names = list(REGISTRY) if names is None else list(names)
    return [check_op(n, instances, seed, tolerance) for n in names]


def format_table(results: list[OpResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'op':<{width}}  {'n':>3}  {'max rel err':>11}  {'time s':>7}  result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.instances:>3}  {r.max_rel_err:>11.2e}  {r.seconds:>7.2f}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


def results_json(results: list[OpResult]) -> str:
    return json.dumps({"tolerance": TOLERANCE, "all_passed": all(r.passed for r in results),
                       "ops": [asdict(r) for r in results]}, indent=2)
