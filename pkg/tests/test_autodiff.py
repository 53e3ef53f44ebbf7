import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mambpo import autodiff as ad
from mambpo.nn import Mlp

from conftest import central_difference, max_relative_error


def test_quadratic_gradient():
    p = ad.param(np.array([1.0, -2.0]))
    (g,) = ad.gradient(ad.sum(ad.square(p)), [p])
    np.testing.assert_array_equal(g, [2.0, -4.0])


def test_constant_loss_has_zero_gradient():
    p = ad.param(np.array([3.0, 4.0]))
    loss = ad.add(ad.sum(ad.mul(p, 0.0)), 7.0)
    (g,) = ad.gradient(loss, [p])
    np.testing.assert_array_equal(g, [0.0, 0.0])


def test_unused_parameter_gets_zeros():
    p, q = ad.param(np.ones(3)), ad.param(np.ones(2))
    gp, gq = ad.gradient(ad.sum(p), [p, q])
    np.testing.assert_array_equal(gq, np.zeros(2))


def test_shared_node_accumulates():
    p = ad.param(np.array(3.0))
    loss = ad.add(ad.mul(p, p), p)  # p² + p
    (g,) = ad.gradient(loss, [p])
    assert g == pytest.approx(7.0)


def test_broadcast_bias_gradient_is_summed():
    x = ad.const(np.ones((5, 3)))
    b = ad.param(np.zeros(3))
    (g,) = ad.gradient(ad.sum(ad.add(x, b)), [b])
    np.testing.assert_array_equal(g, [5, 5, 5])


def _relu_pattern(net, x):
    h, masks = x, []
    for k in range(len(net.params) // 2 - 1):
        h = h @ net.params[2 * k] + net.params[2 * k + 1]
        masks.append(h > 0)
        h = np.maximum(h, 0)
    return np.concatenate([m.ravel() for m in masks])


def test_mlp_gradient_against_finite_differences():
    rng = np.random.default_rng(2)
    net = Mlp([6, 16, 16, 3], rng, dtype=np.float64)
    x = rng.normal(size=(8, 6))
    y = rng.normal(size=(8, 3))

    def loss_value():
        return float(((net.forward(x) - y) ** 2).mean())

    leaves = net.leaves()
    loss = ad.mean(ad.square(ad.add(net(x, leaves), ad.const(-y))))
    grads = ad.gradient(loss, leaves)
    base = _relu_pattern(net, x)
    checked = kinked = 0
    for p, g in zip(net.params, grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            crosses = False
            for step in (1e-4, -1e-4):
                p[idx] = old + step
                crosses |= not np.array_equal(_relu_pattern(net, x), base)
            p[idx] = old
            if crosses:  # finite differences are meaningless across a ReLU kink
                kinked += 1
                continue
            fd = central_difference(loss_value, p, idx, h=1e-4)
            assert max_relative_error(g[idx], fd, floor=1e-6) < 1e-4
            checked += 1
    assert kinked <= 0.1 * (checked + kinked)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.2, 4.0))
def test_softplus_derivative(x, k):
    v = ad.param(np.array(x))
    (g,) = ad.gradient(ad.softplus(v, k), [v])
    assert g == pytest.approx(1.0 / (1.0 + np.exp(-k * x)), rel=1e-9, abs=1e-12)


def test_minimum_routes_gradient():
    a, b = ad.param(np.array([1.0, 5.0])), ad.param(np.array([2.0, 3.0]))
    ga, gb = ad.gradient(ad.sum(ad.minimum(a, b)), [a, b])
    np.testing.assert_array_equal(ga, [1, 0])
    np.testing.assert_array_equal(gb, [0, 1])


def test_concat_and_getitem():
    a, b = ad.param(np.ones(2)), ad.param(np.ones(3))
    c = ad.concat([a, b])
    loss = ad.sum(ad.mul(c[1:4], np.array([1.0, 2.0, 3.0])))
    ga, gb = ad.gradient(loss, [a, b])
    np.testing.assert_array_equal(ga, [0, 1])
    np.testing.assert_array_equal(gb, [2, 3, 0])


def test_non_finite_loss_names_operation():
    p = ad.param(np.array([-1.0, 1.0]))
    with np.errstate(invalid="ignore", divide="ignore"):
        loss = ad.sum(ad.log(p))
        with pytest.raises(ad.NonFiniteError) as info:
            ad.gradient(loss, [p])
    assert info.value.op == "log"


def test_non_scalar_loss_rejected():
    p = ad.param(np.ones(2))
    with pytest.raises(ValueError):
        ad.gradient(ad.mul(p, 2.0), [p])
