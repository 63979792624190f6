import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poupinn import network as nw
from poupinn.numcore import NonFiniteError, Tensor, fd_check, jet_apply, jet_seed, param_gradient, value_and_grad
from poupinn.numcore import autodiff as ad
from poupinn.numcore import jet as J

finite = st.floats(-2.0, 2.0, allow_nan=False)


def scalar_jet(v, gx, gy, hxx, hxy, hyy):
    return J.Jet2(v, gx, gy, hxx, hxy, hyy)


# seeds


def test_seed_x_jet():
    jx, _ = jet_seed((0.3, 0.7))
    assert jx.v == 0.3
    assert (jx.gx, jx.gy) == (1.0, 0.0)
    assert jx.hess == (0.0, 0.0, 0.0)


def test_seed_y_jet_at_origin():
    _, jy = jet_seed((0.0, 0.0))
    assert jy.v == 0.0
    assert (jy.gx, jy.gy) == (0.0, 1.0)


@given(finite, finite)
def test_seed_hessians_vanish(x, y):
    for j in jet_seed((x, y)):
        assert j.hess == (0.0, 0.0, 0.0)


# primitives


def test_tanh_at_zero():
    out = jet_apply("tanh", scalar_jet(0.0, 1.0, 0.0, 0.0, 0.0, 0.0))
    assert out.v == 0.0
    assert out.gx == 1.0
    assert out.hxx == 0.0


def test_tanh_at_half():
    out = jet_apply("tanh", scalar_jet(0.5, 1.0, 0.0, 0.0, 0.0, 0.0))
    assert out.v == pytest.approx(0.46212, abs=1e-5)
    assert out.gx == pytest.approx(0.78645, abs=1e-5)
    t = math.tanh(0.5)
    assert out.hxx == pytest.approx(-2 * t * (1 - t * t), rel=1e-14)
    assert out.hxx == pytest.approx(-0.726862, abs=1e-6)


def test_mul_of_coordinates():
    jx, jy = jet_seed((0.3, 0.7))
    out = jet_apply("mul", jx, jy)
    assert out.v == pytest.approx(0.21)
    assert (out.gx, out.gy) == (0.7, 0.3)
    assert out.hxy == 1.0
    assert out.hxx == 0.0 and out.hyy == 0.0


def test_affine_and_sub():
    jx, jy = jet_seed((0.3, 0.7))
    out = jet_apply("affine", jx, jy, weights=(2.0, -1.0), bias=0.5)
    assert out.v == pytest.approx(0.4)
    assert (out.gx, out.gy) == (2.0, -1.0)
    diff = jet_apply("sub", jx, jy)
    assert diff.grad == (1.0, -1.0)


def test_reciprocal_zero_raises():
    with pytest.raises(ZeroDivisionError):
        jet_apply("reciprocal", scalar_jet(0.0, 1.0, 0.0, 0.0, 0.0, 0.0))


def test_unknown_primitive_and_arity():
    jx, jy = jet_seed((0.1, 0.2))
    with pytest.raises(ValueError):
        jet_apply("sin", jx)
    with pytest.raises(ValueError):
        jet_apply("mul", jx)
    with pytest.raises(ValueError):
        jet_apply("affine", jx, jy, weights=(1.0,))


def _fd_jet(fn, x, h=1e-5):
    """Value, gradient and Hessian of a scalar function of (x, y) by central differences."""
    x = np.asarray(x, dtype=float)
    e = np.eye(2) * h
    g = [(fn(x + e[i]) - fn(x - e[i])) / (2 * h) for i in range(2)]
    H = np.empty((2, 2))
    for i in range(2):
        for k in range(2):
            H[i, k] = (fn(x + e[i] + e[k]) - fn(x + e[i] - e[k]) - fn(x - e[i] + e[k]) + fn(x - e[i] - e[k])) / (4 * h * h)
    return fn(x), g, H


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), finite, finite, finite)
def test_composite_matches_fd(x, y, a, b, c):
    def build(jx, jy):
        z = jet_apply("affine", jx, jy, weights=(a, b), bias=c)
        t = jet_apply("tanh", z)
        e = jet_apply("exp", jet_apply("mul", jx, jy))
        s = jet_apply("softmax-component", t, e, jx, index=1)
        r = jet_apply("reciprocal", jet_apply("add", e, J.constant(1.0)))
        return jet_apply("add", jet_apply("mul", t, s), r)

    def value(p):
        return build(*jet_seed(p)).v

    out = build(*jet_seed((x, y)))
    _, g, H = _fd_jet(value, (x, y))
    assert np.allclose(out.grad, g, rtol=1e-6, atol=1e-8)
    assert np.allclose([[out.hxx, out.hxy], [out.hxy, out.hyy]], H, rtol=1e-4, atol=1e-5)
    assert out.is_finite()


@given(st.lists(finite, min_size=2, max_size=5))
def test_softmax_components_sum_to_one(weights):
    jx, jy = jet_seed((0.4, 0.6))
    logits = [jet_apply("affine", jx, jy, weights=(w, -w), bias=w) for w in weights]
    total = J.constant(0.0)
    for i in range(len(logits)):
        total = total + jet_apply("softmax-component", *logits, index=i)
    assert total.v == pytest.approx(1.0, abs=1e-14)
    for c in (total.gx, total.gy, total.hxx, total.hxy, total.hyy):
        assert abs(c) < 1e-13


# reverse mode


def test_square_gradient():
    assert param_gradient(lambda w: (w * w).sum(), np.array([3.0]))[0] == 6.0


def test_constant_loss_has_zero_gradient():
    g = param_gradient(lambda w: 4.0, np.array([1.0, 2.0]))
    assert np.array_equal(g, [0.0, 0.0])


def test_gradient_length_matches_parameters():
    p = np.arange(7.0)
    assert param_gradient(lambda w: ad.total(ad.tanh(w)), p).shape == p.shape


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_raises():
    with pytest.raises(NonFiniteError):
        value_and_grad(lambda w: ad.log(w).sum(), np.array([-1.0]))


def test_fd_check_linear_is_exact():
    assert fd_check(lambda w: (w * np.array([2.0, -3.0])).sum(), np.array([0.1, 0.2]), 0.5) < 1e-10


def test_fd_check_square():
    assert fd_check(lambda w: (w * w).sum(), np.array([1.0]), 1e-5) <= 1e-9


def test_fd_check_rejects_bad_step():
    with pytest.raises(ValueError):
        fd_check(lambda w: w.sum(), np.ones(2), 0.0)


def test_network_mse_gradient_matches_fd():
    rng = np.random.default_rng(7)
    spec = nw.mlp(2, (16,), 1, "linear")
    flat = nw.init_glorot(spec, rng).flatten()
    X = rng.random((8, 2))
    y = rng.random(8)

    def loss(p):
        out = nw.forward(nw.unflatten(spec, p), spec, X)[:, 0]
        r = out - y
        return ad.mean(r * r)

    assert fd_check(loss, flat, 1e-5) <= 1e-6


def test_tensor_ops_gradients():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))

    def loss(p):
        A = p[:12].reshape(3, 4)
        M = A @ b
        z = ad.exp(M / 3.0) - M * 0.5 + 1.0
        return ad.total(ad.logsumexp(z, axis=1)) + ad.mean(ad.tanh(A).T)

    assert fd_check(loss, a.ravel(), 1e-6) <= 1e-6


def test_tensor_disables_numpy_ufuncs():
    t = Tensor(np.ones(3))
    with pytest.raises(TypeError):
        np.add(np.ones(3), t)
    assert isinstance(np.ones(3) + t, Tensor)


def test_reductions_on_plain_arrays():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert ad.total(x) == 10.0
    assert ad.mean(x) == 2.5
    assert np.allclose(ad.logsumexp(x, axis=1)[:, 0], np.log(np.exp(x).sum(axis=1)))
    assert math.isclose(float(ad.data(ad.exp(0.0))), 1.0)
