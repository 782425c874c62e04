import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mbexwn.autodiff import Tensor, grad_check
from mbexwn.measure import alias_floor_db, fundamental_f0
from mbexwn.wavetable import (F0Contour, build_table_bank, excitation_vjp, phase_positions,
                              synthesize_excitation)


@pytest.fixture(scope="module")
def bank():
    return build_table_bank()


def test_ranges_are_log_spaced(bank):
    edges = np.append(bank.f0_ranges[:, 0], bank.f0_ranges[-1, 1])
    np.testing.assert_allclose(edges, np.geomspace(45, 1400, 6))
    ratios = bank.f0_ranges[:, 1] / bank.f0_ranges[:, 0]
    np.testing.assert_allclose(ratios, ratios[0])


def test_harmonics_stay_below_nyquist_at_highest_playback(bank):
    assert list(bank.harmonics) == [85, 43, 21, 10, 7]
    assert np.all(bank.harmonics * bank.max_playback < 12000)
    # and the stored spectrum has exactly that many partials
    spec = np.abs(np.fft.rfft(bank.tables, axis=-1))
    for t, h in enumerate(bank.harmonics):
        assert np.all(spec[t, h + 1:] < 1e-9)
        assert np.all(spec[t, 1:h + 1] > 1.0)


def test_tables_are_unit_rms(bank):
    np.testing.assert_allclose(np.sqrt(np.mean(bank.tables ** 2, axis=1)), 1.0)


def test_phase_positions_examples():
    bank = build_table_bank(table_size=1024)
    pos = phase_positions(np.full(4, 6000.0), bank).data
    np.testing.assert_allclose(pos, [256, 512, 768, 0])
    pos = phase_positions(np.array([100.0, 0.0, 100.0]), bank).data
    np.testing.assert_allclose(pos, [100 * 1024 / 24000, 100 * 1024 / 24000, 200 * 1024 / 24000])


def test_bad_bank_arguments():
    with pytest.raises(ValueError):
        build_table_bank(table_size=1000)
    with pytest.raises(ValueError):
        build_table_bank(f0_min=500, f0_max=100)


def test_negative_f0_rejected(bank):
    with pytest.raises(ValueError):
        synthesize_excitation(np.array([100.0, -1.0]), bank)


def test_unvoiced_samples_are_silent(bank):
    f0 = np.full(2000, 150.0)
    f0[500:900] = 0.0
    out = synthesize_excitation(f0, bank).data
    assert np.all(out[500:900] == 0.0)
    voicing = np.ones(2000, bool)
    voicing[1500:] = False
    out = synthesize_excitation(F0Contour(Tensor(np.full(2000, 150.0)), voicing), bank).data
    assert np.all(out[1500:] == 0.0)


@pytest.mark.parametrize("f0", [45.0, 63.0, 220.0, 777.0, 1399.0])
def test_constant_pitch_is_exact_and_clean(bank, f0):
    x = synthesize_excitation(np.full(24000, f0), bank).data
    assert abs(fundamental_f0(x, f0) - f0) < 0.5
    assert alias_floor_db(x, f0) < -50


def test_vjp_matches_finite_differences(bank):
    rng = np.random.default_rng(3)
    f0 = 200 + 30 * np.sin(np.linspace(0, 3, 150))
    w = rng.standard_normal(150)
    report = grad_check(lambda t: (synthesize_excitation(t, bank) * w).sum(), f0, epsilon=1e-4)
    assert report.max_rel_err < 1e-4
    np.testing.assert_allclose(excitation_vjp(f0, bank, w),
                               _tape_grad(bank, f0, w), rtol=1e-12)


def _tape_grad(bank, f0, w):
    from mbexwn.autodiff import value_and_grad
    return value_and_grad(lambda t: (synthesize_excitation(t, bank) * w).sum(), f0)[1]


@given(st.floats(45, 1400), st.floats(45, 1400))
def test_output_bounded_by_table_peak(bank, a, b):
    f0 = np.geomspace(a, b, 400)
    out = synthesize_excitation(f0, bank).data
    assert np.all(np.abs(out) <= np.abs(bank.tables).max() + 1e-9)


@given(st.floats(45, 1400))
def test_crossfade_weights_sum_to_one(bank, f):
    from mbexwn.wavetable import _crossfade
    j, a, _ = _crossfade(np.array([f]), bank)
    assert 0 <= a[0] <= 1
    assert 0 <= j[0] <= bank.num_tables - 2
