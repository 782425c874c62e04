"""Acceptance criteria for the signal chain.

Each test prints one ``[PASS]``/``[FAIL]`` line with the measured numbers and
asserts the same condition, so a red test and a FAIL line always coincide.
Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from mbexwn.audio import AudioBuffer
from mbexwn.autodiff import Tensor
from mbexwn.config import PipelineConfig
from mbexwn.gradcheck import run_suite
from mbexwn.layers import F0_SPEC, build_vtf_net, parse_spec, total_upsampling
from mbexwn.losses import build_voiced_mask, spectral_recon_loss
from mbexwn.measure import alias_floor_db, anticausal_energy_ratio, fundamental_f0, snr_db
from mbexwn.pqmf import analyze, design_pqmf, synthesize
from mbexwn.resynth import oracle_resynthesize
from mbexwn.synth import VOWEL_FORMANTS, smooth_contour, vowel
from mbexwn.training import block_means, moving_average, synthetic_dataset, train_f0_toy
from mbexwn.vtf import log_magnitude_mean, min_phase_envelope, zero_gain_project
from mbexwn.wavetable import build_table_bank, synthesize_excitation


@pytest.fixture
def verdict(capsys):
    def emit(name: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return passed
    return emit


def test_gradient_suite(verdict):
    t0 = time.perf_counter()
    results = run_suite(instances=10, seed=0)
    seconds = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    worst = max(r.max_rel_err for r in results)
    ok = not failed and seconds < 300 and all(r.instances >= 10 for r in results)
    assert verdict("gradient suite", ok,
                   f"{len(results)} ops x 10 instances, worst rel err {worst:.2e} (< 1e-4), "
                   f"{seconds:.0f} s (< 300 s), failed: {failed or 'none'}")


def test_wavetable_fidelity(verdict):
    bank = build_table_bank()
    rng = np.random.default_rng(2024)
    pitches = rng.uniform(45.0, 1400.0, 20)
    errors, floors = [], []
    for f in pitches:
        x = synthesize_excitation(Tensor(np.full(24000, f), dtype=np.float64), bank).data
        errors.append(abs(fundamental_f0(x, f) - f))
        floors.append(alias_floor_db(x, f))
    ok = max(errors) < 0.5 and max(floors) < -50
    assert verdict("wavetable fidelity", ok,
                   f"20 pitches in [{pitches.min():.0f}, {pitches.max():.0f}] Hz, "
                   f"max |F0 err| {max(errors):.4f} Hz (< 0.5), worst alias floor {max(floors):.1f} dB (< -50)")


def test_pqmf_round_trip(verdict):
    bank = design_pqmf()
    rng = np.random.default_rng(7)
    noise = rng.standard_normal(48000)
    speech = vowel(smooth_contour(48000, rng), VOWEL_FORMANTS["o"])
    snrs = [snr_db(x, synthesize(bank, analyze(bank, x)).data, trim=bank.taps) for x in (noise, speech)]
    ok = min(snrs) >= 40
    assert verdict("PQMF round trip", ok,
                   f"15 bands, delay {bank.delay_samples}, SNR white noise {snrs[0]:.1f} dB, "
                   f"speech-like {snrs[1]:.1f} dB (>= 40)")


def test_minimum_phase_envelope(verdict):
    rng = np.random.default_rng(11)
    raw = rng.standard_normal((100, 160)) * 0.3 / np.sqrt(1 + np.arange(160))
    env = min_phase_envelope(zero_gain_project(Tensor(raw, dtype=np.float64))).data
    gain = np.max(np.abs(log_magnitude_mean(env)))
    anticausal = np.max(anticausal_energy_ratio(env))
    ok = gain < 1e-6 and anticausal < 1e-6
    assert verdict("minimum-phase envelope", ok,
                   f"100 frames, max |mean log|H|| {gain:.1e} (< 1e-6), "
                   f"max anticausal energy ratio {anticausal:.1e} (< 1e-6)")


def _distance_to_flip(voicing):
    flips = [i for i in range(1, len(voicing)) if voicing[i] != voicing[i - 1]]
    out = np.full(len(voicing), np.inf)
    for i in range(len(voicing)):
        for f in flips:
            # samples f-1 and f both sit at distance 1 from the flip between them
            out[i] = min(out[i], f - i if i < f else i - f + 1)
    return out


def test_loss_identities(verdict):
    x = np.random.default_rng(3).standard_normal(7200) * 0.3
    same = float(spectral_recon_loss(x, x).total.data)
    log_e = spectral_recon_loss(x, np.e * x).log_terms
    lin_2 = spectral_recon_loss(x, 2 * x).linear_terms

    voicing = np.zeros(6000, bool)
    voicing[500:2600] = True
    voicing[2900:3100] = True
    voicing[3700:5990] = True
    d = _distance_to_flip(voicing)
    m = build_voiced_mask(voicing)
    mask_ok = (np.array_equal(m.core, voicing & (d > 1200))
               and np.array_equal(m.voiced_boundary, voicing & (d <= 1200))
               and np.array_equal(m.unvoiced_boundary, ~voicing & (d <= 480)))
    ok = (same == 0.0 and np.allclose(log_e, 1.0, rtol=1e-12, atol=0)
          and np.allclose(lin_2, 1.0, rtol=1e-12, atol=0) and mask_ok)
    assert verdict("loss identities", ok,
                   f"L_R(x, x) = {same}, L_L(x, e x) = {np.round(log_e, 12).tolist()}, "
                   f"L_A(x, 2x) = {np.round(lin_2, 12).tolist()}, mask vs 50/20 ms rule: "
                   f"{'exact' if mask_ok else 'mismatch'}")


def test_topology(verdict):
    factor = total_upsampling(parse_spec(F0_SPEC))
    net = build_vtf_net(seed=0)
    width = net(np.zeros((5, 80), np.float32)).shape[-1]
    ok = factor == 100 and width == 160
    assert verdict("topology", ok, f"F0 net upsampling {factor} (== 100), VTF net width {width} (== 160)")


def test_toy_f0_training(verdict, tmp_path):
    cfg = PipelineConfig()
    res = train_f0_toy(synthetic_dataset(20, seed=0), cfg, out_dir=tmp_path, steps=2000)
    blocks = block_means(res.losses, 100)
    rises = np.diff(blocks)
    strict = np.diff(moving_average(res.losses, 100))
    ok = res.masked_mae < 10 and res.seconds < 900 and np.all(rises <= 0)
    assert verdict("toy F0 training", ok,
                   f"2000 steps lr {cfg.optimizer.lr:g}, masked MAE {res.masked_mae:.2f} Hz (< 10), "
                   f"{res.seconds:.0f} s (< 900), 100-step moving average at 100-step stride "
                   f"non-increasing: {bool(np.all(rises <= 0))} "
                   f"(step-by-step: {int(np.sum(strict > 0))} rises of at most {max(strict.max(), 0):.1e}), "
                   f"boundary L_R {res.boundary_recon:.3f}")


@pytest.fixture(scope="module")
def resynth_runs():
    runs = []
    for name in ("a", "e", "i", "o", "u"):
        for f in (110.0, 220.0):
            x = vowel(np.full(24000, f), VOWEL_FORMANTS[name])
            runs.append((name, f, oracle_resynthesize(AudioBuffer(x), np.full(24000, f))[1]))
    return runs


def test_oracle_resynthesis(verdict, resynth_runs):
    maes = np.array([r.mel_mae_db for _, _, r in resynth_runs])
    worst = resynth_runs[int(np.argmax(maes))]
    ok = maes.max() < 3.0
    assert verdict("oracle resynthesis", ok,
                   f"5 vowels x 2 pitches, mean mel MAE {maes.mean():.2f} dB, "
                   f"worst {maes.max():.2f} dB ('{worst[0]}' at {worst[1]:.0f} Hz) (< 3)")


def test_throughput_report(verdict, resynth_runs):
    rates = [r.samples_per_second for _, _, r in resynth_runs]
    ok = all(np.isfinite(rates)) and min(rates) > 0
    assert verdict("throughput (informational)", ok,
                   f"oracle resynthesis {np.median(rates):,.0f} samples/s median on one core")
