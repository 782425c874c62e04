import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mbexwn import autodiff as ad
from mbexwn.autodiff import GradCheckError, Tape, Tensor, grad_check, value_and_grad

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def test_tape_records_only_inside_context():
    x = Tensor(np.ones(3), requires_grad=True)
    y = x * 2.0
    assert ad.current_tape() is None
    with Tape() as tape:
        z = (x * x).sum()
        (g,) = tape.grad(z, [x])
    np.testing.assert_allclose(g, 2 * np.ones(3))
    assert y.node_id is None


def test_unused_leaf_gets_zero_gradient():
    with Tape() as tape:
        a = Tensor(np.arange(3.0), requires_grad=True)
        b = Tensor(np.ones(2), requires_grad=True)
        ga, gb = tape.grad((a * a).sum(), [a, b])
    np.testing.assert_array_equal(gb, np.zeros(2))
    np.testing.assert_allclose(ga, 2 * np.arange(3.0))


def test_shared_subexpression_accumulates():
    with Tape() as tape:
        x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
        y = x * x
        z = (y + y * 3.0).sum()
        (g,) = tape.grad(z, [x])
    np.testing.assert_allclose(g, 8 * x.data)


def test_broadcast_gradient_is_reduced():
    with Tape() as tape:
        a = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.arange(4.0), requires_grad=True)
        (ga, gb) = tape.grad((a * b).sum(), [a, b])
    assert gb.shape == (4,)
    np.testing.assert_allclose(gb, 3 * np.ones(4))
    np.testing.assert_allclose(ga, np.broadcast_to(np.arange(4.0), (3, 4)))


def test_runtime_mode_is_float32():
    with Tape("float32"):
        x = Tensor(np.ones(4))
        y = ad.rfft(x)
    assert x.dtype == np.float32
    assert y.dtype == np.complex64


def test_complex_gradient_convention():
    # L = |z|^2 with z = x + i*y gives dL/dx + i dL/dy = 2 z
    z0 = np.array([1.0 + 2.0j, -0.5 + 0.25j])
    with Tape() as tape:
        re = Tensor(z0.real, requires_grad=True)
        z = ad.to_complex(re) + Tensor(1j * z0.imag)
        loss = (ad.tabs(z) ** 2).sum()
        (g,) = tape.grad(loss, [re])
    np.testing.assert_allclose(g, 2 * z0.real)


def test_rfft_irfft_roundtrip_gradient():
    x0 = np.random.default_rng(1).standard_normal(16)
    val, g = value_and_grad(lambda t: (ad.irfft(ad.rfft(t), n=16) ** 2).sum(), x0)
    np.testing.assert_allclose(val, np.sum(x0 ** 2))
    np.testing.assert_allclose(g, 2 * x0, atol=1e-12)


def test_irfft_rejects_odd_length():
    with pytest.raises(ValueError):
        ad.irfft(ad.rfft(Tensor(np.ones(8))), n=7)


def test_grad_check_flags_a_wrong_vjp():
    def bad_square(t):
        out = t.data ** 2
        return ad.record_op("bad", out, (t,), lambda g: (g * 3.0 * t.data,))

    report = grad_check(lambda t: bad_square(t).sum(), np.array([0.5, 1.0, -2.0]))
    assert report.max_rel_err > 0.3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_rejects_nonfinite():
    with pytest.raises(GradCheckError):
        grad_check(lambda t: ad.log(t).sum(), np.array([-1.0, 2.0]))


def test_grad_check_subsamples_large_inputs():
    x = np.random.default_rng(0).standard_normal(600)
    report = grad_check(lambda t: (t * t).sum(), x)
    assert report.n_coords == 128
    assert report.max_rel_err < 1e-6


def test_gather_vjp_scatters_repeated_indices():
    idx = np.array([0, 0, 2])
    val, g = value_and_grad(lambda t: ad.gather(t, idx).sum(), np.array([1.0, 2.0, 3.0]))
    assert val == 5.0
    np.testing.assert_array_equal(g, [2.0, 0.0, 1.0])


@given(arrays(np.float64, st.integers(2, 12), elements=finite))
def test_sum_of_squares_gradient_property(x):
    _, g = value_and_grad(lambda t: (t * t).sum(), x)
    np.testing.assert_allclose(g, 2 * x, atol=1e-12)


@given(arrays(np.float64, st.integers(2, 10), elements=finite), st.floats(-2, 2))
def test_gradient_is_linear_in_the_cotangent(x, c):
    _, g1 = value_and_grad(lambda t: ad.tanh(t).sum() * c, x)
    _, g2 = value_and_grad(lambda t: ad.tanh(t).sum(), x)
    np.testing.assert_allclose(g1, c * g2, atol=1e-12)


@given(arrays(np.float64, (3, 5), elements=finite))
def test_cumsum_matches_numpy_and_checks(x):
    with Tape():
        np.testing.assert_allclose(ad.cumsum(Tensor(x)).data, np.cumsum(x, axis=-1))
    assert grad_check(lambda t: (ad.cumsum(t) * np.arange(5.0)).sum(), x).max_rel_err < 1e-6
