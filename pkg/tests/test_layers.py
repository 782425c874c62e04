import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mbexwn import layers as L
from mbexwn.autodiff import Tape, Tensor


def test_published_f0_spec_upsamples_by_100():
    layers = L.parse_spec(L.F0_SPEC)
    assert L.total_upsampling(layers) == 100
    assert str(layers[8]) == "C:3x50"
    assert layers[-1].kind == "linear_upsample"


def test_vtf_spec_emits_160_coefficients():
    layers = L.parse_spec(L.VTF_SPEC)
    assert layers[-1].out_channels == 160
    net = L.build_vtf_net(L.TOY_VTF_SPEC, seed=0)
    assert net(np.zeros((7, 80))).shape == (7, 160)


@pytest.mark.parametrize("bad", ["C:2x10", "C:3x10x3", "X:1", "C:3x10,,L:2", "L:0"])
def test_malformed_specs_rejected(bad):
    with pytest.raises(ValueError):
        L.parse_spec(bad)


def test_spec_round_trips_through_str():
    layers = L.parse_spec(L.TOY_F0_SPEC)
    assert L.parse_spec(", ".join(map(str, layers))) == layers


def test_conv1d_matches_direct_sum():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 10, 3))
    w = rng.standard_normal((3, 3, 4))
    with Tape():
        y = L.conv1d(Tensor(x), Tensor(w), dilation=2).data
    xp = np.pad(x, ((0, 0), (2, 2), (0, 0)))
    ref = sum(np.einsum("btc,cd->btd", xp[:, 2 * j:2 * j + 10], w[j]) for j in range(3))
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_reshape_upsample_interleaves_channel_groups():
    x = np.arange(8.0).reshape(2, 4)
    y = L.reshape_upsample(Tensor(x, dtype=np.float64), 2).data
    np.testing.assert_array_equal(y, [[0, 1], [2, 3], [4, 5], [6, 7]])
    back = L.reshape_downsample(Tensor(y, dtype=np.float64), 2).data
    np.testing.assert_array_equal(back, x)


def test_linear_upsample_interpolates_and_holds_last():
    x = Tensor(np.array([[0.0], [4.0]]), dtype=np.float64)
    y = L.linear_upsample(x, 4).data[:, 0]
    np.testing.assert_allclose(y, [0, 1, 2, 3, 4, 4, 4, 4])


def test_toy_f0_net_output_range_and_length():
    net = L.build_f0_net(L.TOY_F0_SPEC, seed=1)
    assert net.config["project_output"]
    assert net.n_parameters() == 80881
    y = net(np.random.default_rng(0).standard_normal((2, 5, 80))).data
    assert y.shape == (2, 500)
    assert np.all((y >= 45) & (y <= 1400))


def test_published_f0_net_builds_with_projection():
    net = L.build_f0_net(L.F0_SPEC, seed=0)
    assert net.params["out.w"].shape == (1, 50, 1)
    with pytest.raises(ValueError):
        L.build_f0_net(L.F0_SPEC, project_output=False)


def test_wavenet_shapes():
    net = L.build_wavenet(in_channels=30, channels=8, cond_channels=80, blocks=1, layers_per_block=3)
    y = net(np.zeros((1, 12, 30)), np.zeros((1, 12, 80)))
    assert y.shape == (1, 12, 15)
    assert L.receptive_field(3, net.config["dilations"]) == 15


@pytest.mark.parametrize("dtype", ["float32", "float64"])
def test_checkpoint_round_trip_is_exact(tmp_path, dtype):
    net = L.build_f0_net(L.TOY_F0_SPEC, seed=3, dtype=dtype)
    L.save_checkpoint(net, tmp_path / "ck", {"step": 7})
    loaded, extra = L.load_checkpoint(tmp_path / "ck")
    assert extra == {"step": 7}
    assert type(loaded) is type(net) and loaded.spec == net.spec
    for k, p in net.params.items():
        assert loaded.params[k].dtype == np.dtype(dtype)
        np.testing.assert_array_equal(loaded.params[k].data, p.data)
    x = np.random.default_rng(0).standard_normal((1, 3, 80))
    np.testing.assert_array_equal(loaded(x).data, net(x).data)


@given(st.integers(1, 8), st.integers(1, 4), st.integers(1, 5))
def test_resample_linear_is_exact_on_ramps(n, ratio_den, slope):
    x = slope * np.arange(n * 3, dtype=float)
    ratio = 1.0 / ratio_den
    out = L.resample_linear(Tensor(x, dtype=np.float64), n * ratio_den, ratio).data
    np.testing.assert_allclose(out, slope * np.arange(n * ratio_den) * ratio, atol=1e-9)
