import math

import numpy as np
import pytest
import scipy.signal
import scipy.special
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from derrt.numerics import autograd as ag
from derrt.numerics import (
    SGD,
    DiagonalGaussian,
    NonFiniteError,
    Tensor,
    backward,
    derive_seed,
    dumps_params,
    gaussian_logpdf,
    loads_params,
    logsumexp,
    rng_stream,
    sgd_step,
)
from derrt.numerics.gaussian import STD_FLOOR

from conftest import central_difference


# -- rng ---------------------------------------------------------------------


def test_same_seed_and_stream_give_same_draws():
    a = rng_stream(7, 3).random(5)
    b = rng_stream(7, 3).random(5)
    np.testing.assert_array_equal(a, b)


def test_streams_are_independent():
    assert not np.array_equal(rng_stream(7, 0).random(5), rng_stream(7, 1).random(5))
    assert derive_seed(1, 2) != derive_seed(1, 3)
    assert 0 <= derive_seed(2**70, 5) < 2**63


# -- gaussian ----------------------------------------------------------------


def test_logsumexp_matches_scipy(rng):
    v = rng.normal(size=(4, 7)) * 300
    np.testing.assert_allclose(logsumexp(v, axis=1), scipy.special.logsumexp(v, axis=1), rtol=1e-12)
    assert logsumexp(v) == pytest.approx(scipy.special.logsumexp(v), rel=1e-12)


def test_logsumexp_edge_cases():
    assert logsumexp([-np.inf, -np.inf]) == -np.inf
    assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2))
    with pytest.raises(ValueError):
        logsumexp([])


def test_standard_normal_at_origin():
    g = DiagonalGaussian(np.zeros(1), np.zeros(1))
    assert gaussian_logpdf(g, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_diag_logpdf_matches_scipy(rng):
    mean, std = rng.normal(size=3), rng.uniform(0.1, 3, size=3)
    x = rng.normal(size=(5, 3))
    expect = scipy.stats.multivariate_normal(mean, np.diag(std**2)).logpdf(x)
    np.testing.assert_allclose(DiagonalGaussian.from_std(mean, std).logpdf(x), expect, rtol=1e-10)


def test_std_floor_and_dimension_errors():
    g = DiagonalGaussian.from_std([0.0], [1e-9])
    assert g.std[0] == pytest.approx(STD_FLOOR)
    with pytest.raises(ValueError):
        gaussian_logpdf(DiagonalGaussian(np.zeros(2), np.zeros(2)), [0.0, 0.0, 0.0])


# -- autograd ----------------------------------------------------------------


def _check_grad(build, *arrays, tol=1e-6):
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    backward(build(*leaves))
    for leaf in leaves:
        fd = central_difference(lambda: build(*[Tensor(l.data) for l in leaves]).item(), leaf.data)
        np.testing.assert_allclose(leaf.grad, fd, rtol=tol, atol=tol)


@pytest.mark.parametrize(
    "fn",
    [
        lambda a, b: (a * b + a - b).sum(),
        lambda a, b: (a / (ag.exp(b) + 1.0)).sum(),
        lambda a, b: ag.tanh(a @ ag.transpose(b)).sum(),
        lambda a, b: ag.logsumexp(a * b, axis=1).sum(),
        lambda a, b: (ag.sigmoid(a) * ag.softplus(b)).sum(),
        lambda a, b: ag.log(ag.square(a) + 1.0).sum() + ag.relu(b + 0.3).sum(),
        lambda a, b: ag.concat([a, b], axis=0)[1:3].sum() + ag.stack([a, b], axis=0)[1, 0].sum(),
        lambda a, b: (a.reshape(6) * b.reshape(6)).sum(),
    ],
)
def test_op_gradients_match_finite_differences(fn, rng):
    _check_grad(fn, rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))


def test_broadcast_gradient(rng):
    _check_grad(lambda w, b: ag.tanh(w + b).sum(), rng.normal(size=(4, 3)), rng.normal(size=(3,)))


def test_conv2d_matches_scipy_correlation(rng):
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = ag.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    assert out.shape == (2, 4, 5, 4)
    for n in range(2):
        for o in range(4):
            ref = sum(scipy.signal.correlate2d(x[n, c], w[o, c], mode="valid") for c in range(3)) + b[o]
            np.testing.assert_allclose(out[n, o], ref, rtol=1e-12, atol=1e-12)


def test_conv_and_pool_gradients(rng):
    x = rng.normal(size=(1, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    _check_grad(lambda x, w, b: (ag.maxpool2x2(ag.conv2d(x, w, b)) * 1.3).sum(), x, w, b)


def test_maxpool_floor_mode():
    x = Tensor(np.arange(1 * 1 * 5 * 5, dtype=float).reshape(1, 1, 5, 5))
    out = ag.maxpool2x2(x).data
    np.testing.assert_array_equal(out[0, 0], [[6, 8], [16, 18]])


def test_backward_requires_scalar_and_rejects_non_finite():
    a = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(a * 2.0)
    with pytest.raises(NonFiniteError):
        ag.log(Tensor(np.zeros(1)) * a[0:1])


def test_shared_subexpression_accumulates():
    a = Tensor(np.array(3.0), requires_grad=True)
    y = a * a + a
    backward(y)
    assert a.grad == pytest.approx(7.0)


# -- optimiser ---------------------------------------------------------------


def test_sgd_zero_lr_leaves_params():
    p = [np.array([1.0, -2.0])]
    sgd_step(p, [np.array([5.0, 5.0])], lr=0.0, momentum=0.9)
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_sgd_plain_step():
    p = [np.array([1.0])]
    sgd_step(p, [np.array([2.0])], lr=0.1, momentum=0.0)
    assert p[0][0] == pytest.approx(0.8)


def test_sgd_momentum_accumulates():
    p = [np.array([0.0])]
    _, buf = sgd_step(p, [np.array([1.0])], lr=1.0, momentum=0.5)
    sgd_step(p, [np.array([1.0])], lr=1.0, momentum=0.5, buffers=buf)
    assert p[0][0] == pytest.approx(-(1.0 + 1.5))


def test_sgd_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_step([np.zeros(2)], [np.zeros(3)], lr=0.1)


def test_sgd_optimiser_clips_global_norm():
    t = Tensor(np.zeros(2), requires_grad=True)
    opt = SGD([t], lr=1.0, momentum=0.0, clip_norm=1.0)
    t.grad = np.array([3.0, 4.0])
    opt.step()
    np.testing.assert_allclose(t.data, [-0.6, -0.8])


# -- parameter files ---------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=8), st.lists(st.floats(allow_nan=False), max_size=6), max_size=4))
def test_param_roundtrip(table):
    params = {k: np.array(v, float) for k, v in table.items()}
    back = loads_params(dumps_params(params))
    assert set(back) == set(params)
    for k in params:
        np.testing.assert_array_equal(back[k], params[k])


def test_param_bytes_are_order_independent():
    a = {"b": np.ones((2, 2)), "a": np.zeros(3)}
    b = {"a": np.zeros(3), "b": np.ones((2, 2))}
    assert dumps_params(a) == dumps_params(b)
    with pytest.raises(ValueError):
        loads_params(b"NOTMAGIC" + dumps_params(a)[8:])
