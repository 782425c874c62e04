import numpy as np
import pytest

from mbexwn.audio import AudioBuffer
from mbexwn.measure import fundamental_f0
from mbexwn.resynth import mel_distance_db, mixed_excitation, oracle_resynthesize
from mbexwn.synth import VOWEL_FORMANTS, vowel
from mbexwn.wavetable import build_table_bank


@pytest.fixture(scope="module")
def sustained():
    f0 = np.full(24000, 180.0)
    return vowel(f0, VOWEL_FORMANTS["a"]), f0


def test_mel_distance_of_identical_signals_is_zero(sustained):
    x, _ = sustained
    assert mel_distance_db(x, x) == 0.0


def test_vowel_resynthesis_is_close(sustained):
    x, f0 = sustained
    y, report = oracle_resynthesize(AudioBuffer(x), f0)
    assert report.mel_mae_db < 3.0
    assert report.samples_per_second > 0
    assert abs(fundamental_f0(y.samples, 180.0) - 180.0) < 0.5


def test_energy_matches_per_200ms_segment(sustained):
    x, f0 = sustained
    y = oracle_resynthesize(AudioBuffer(x), f0)[0].samples
    for i in range(0, len(x), 4800):
        ratio = np.sqrt(np.mean(y[i:i + 4800] ** 2) / np.mean(x[i:i + 4800] ** 2))
        assert abs(20 * np.log10(ratio)) < 3.0


def test_deterministic_given_seed(sustained):
    x, f0 = sustained
    a = oracle_resynthesize(AudioBuffer(x), f0, seed=5)[0].samples
    b = oracle_resynthesize(AudioBuffer(x), f0, seed=5)[0].samples
    np.testing.assert_array_equal(a, b)


def test_unvoiced_input_gives_noise_without_pulses():
    rng = np.random.default_rng(0)
    bank = build_table_bank()
    f0 = np.zeros(4800)
    exc = mixed_excitation(f0, np.zeros(4800, bool), bank, rng)
    assert np.std(exc) > 0.5
    noise = rng.standard_normal(4800) * 0.1
    y, report = oracle_resynthesize(AudioBuffer(noise), f0)
    assert report.voiced_fraction == 0.0
    assert np.sqrt(np.mean(y.samples ** 2)) > 0


def test_f0_length_must_match():
    with pytest.raises(ValueError):
        oracle_resynthesize(AudioBuffer(np.zeros(4800)), np.zeros(100))
