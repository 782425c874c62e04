import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.io import wavfile

from mbexwn.audio import (AudioBuffer, f0_to_audio_rate, read_f0_csv, read_wav, write_f0_csv,
                          write_wav)
from mbexwn.synth import sawtooth
from mbexwn.voicing import annotate_voicing, noise_ratio


def test_sawtooth_is_voiced():
    f0 = np.full(12000, 180.0)
    assert annotate_voicing(sawtooth(f0), f0).mean() >= 0.99


def test_noise_is_unvoiced():
    rng = np.random.default_rng(0)
    f0 = np.full(12000, 180.0)
    assert annotate_voicing(rng.standard_normal(12000), f0).mean() <= 0.01


def test_half_and_half_boundary():
    rng = np.random.default_rng(1)
    f0 = np.full(24000, 200.0)
    x = np.concatenate([np.sin(2 * np.pi * 200 * np.arange(12000) / 24000),
                        rng.standard_normal(12000) * 0.5])
    v = annotate_voicing(x, f0)
    flip = np.flatnonzero(v[1:] != v[:-1])
    assert len(flip) == 1
    assert abs(flip[0] + 1 - 12000) <= 0.025 * 24000


@given(st.floats(0.01, 100))
def test_voicing_is_gain_invariant(g):
    rng = np.random.default_rng(2)
    f0 = np.full(6000, 150.0)
    x = sawtooth(f0) + 0.3 * rng.standard_normal(6000)
    x[3000:] = rng.standard_normal(3000)
    np.testing.assert_array_equal(annotate_voicing(x, f0), annotate_voicing(g * x, f0))


def test_zero_f0_is_unvoiced():
    assert np.all(noise_ratio(np.ones(2000), np.zeros(2000)) == 1.0)


def test_pcm16_round_trip_is_bit_exact(tmp_path):
    pcm = np.random.default_rng(0).integers(-32768, 32767, 1000).astype(np.int16)
    wavfile.write(tmp_path / "a.wav", 24000, pcm)
    audio = read_wav(tmp_path / "a.wav")
    write_wav(tmp_path / "b.wav", audio)
    _, back = wavfile.read(tmp_path / "b.wav")
    np.testing.assert_array_equal(back, pcm)


def test_float_input_and_clipping(tmp_path):
    wavfile.write(tmp_path / "f.wav", 24000, np.array([0.5, -2.0, 2.0], np.float32))
    audio = read_wav(tmp_path / "f.wav")
    np.testing.assert_allclose(audio.samples, [0.5, -2.0, 2.0])
    write_wav(tmp_path / "g.wav", audio)
    _, back = wavfile.read(tmp_path / "g.wav")
    np.testing.assert_array_equal(back, [16384, -32768, 32767])


@pytest.mark.parametrize("rate,shape", [(44100, (10,)), (24000, (10, 2))])
def test_unsupported_wavs_rejected(tmp_path, rate, shape):
    wavfile.write(tmp_path / "x.wav", rate, np.zeros(shape, np.int16))
    with pytest.raises(ValueError):
        read_wav(tmp_path / "x.wav")


def test_garbage_file_rejected(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"not a wav")
    with pytest.raises(ValueError):
        read_wav(tmp_path / "x.wav")


def test_audio_buffer_validates():
    with pytest.raises(ValueError):
        AudioBuffer(np.array([np.nan]))
    assert AudioBuffer(np.zeros(2400)).duration == pytest.approx(0.1)


def test_f0_csv_round_trip(tmp_path):
    t = np.array([0.0, 0.01, 0.02])
    f = np.array([100.0, 0.0, 120.5])
    write_f0_csv(tmp_path / "f.csv", t, f)
    t2, f2 = read_f0_csv(tmp_path / "f.csv")
    np.testing.assert_allclose(t2, t)
    np.testing.assert_allclose(f2, f)


@pytest.mark.parametrize("text", ["t,f\n0,1\n", "time_s,f0_hz\n", "time_s,f0_hz\n0,1\n0,2\n",
                                  "time_s,f0_hz\n0,-5\n", "time_s,f0_hz\n0,abc\n"])
def test_bad_f0_csv_rejected(tmp_path, text):
    (tmp_path / "f.csv").write_text(text)
    with pytest.raises(ValueError):
        read_f0_csv(tmp_path / "f.csv")


def test_f0_resampling_interpolates_voiced_and_keeps_edges_sharp():
    t = np.array([0.0, 0.01, 0.02, 0.03])
    f = np.array([100.0, 200.0, 0.0, 0.0])
    out = f0_to_audio_rate(t, f, 720)
    assert out[120] == pytest.approx(150.0)
    assert out[240] == pytest.approx(200.0)
    assert np.all((out[241:480] == 200.0) | (out[241:480] == 0.0))
    assert out[400] == 0.0
