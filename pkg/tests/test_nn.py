import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mambpo import autodiff as ad
from mambpo.nn import (CheckpointError, DimensionError, EnsembleMlp, GaussianPolicyHead, Mlp, OptimizerState,
                       adam_update, decode_network, encode_network, load_network, mlp_forward, polyak_update,
                       save_network, squashed_gaussian_log_prob, squashed_gaussian_sample)


def test_zero_network_outputs_zero():
    net = Mlp([4, 8, 3])
    for p in net.params:
        p[...] = 0
    np.testing.assert_array_equal(mlp_forward(net, np.ones((2, 4))), np.zeros((2, 3)))


def test_identity_layer():
    net = Mlp([3, 3])
    net.params[0][...] = np.eye(3)
    net.params[1][...] = 0
    x = np.array([[0.5, -2.0, 7.0]], np.float32)
    np.testing.assert_array_equal(mlp_forward(net, x), x)


def test_forward_matches_hand_rolled_oracle():
    net = Mlp([2, 3, 1], np.random.default_rng(8))
    w1, b1, w2, b2 = (p.astype(np.float64) for p in net.params)
    x = np.array([0.3, -1.2])
    hidden = [max(0.0, sum(x[i] * w1[i, j] for i in range(2)) + b1[j]) for j in range(3)]
    expected = sum(hidden[j] * w2[j, 0] for j in range(3)) + b2[0]
    assert mlp_forward(net, x[None])[0, 0] == pytest.approx(expected, abs=1e-6)


def test_parameter_count_and_dimension_check():
    net = Mlp([14 * 3 + 6, 256, 256, 1])
    assert net.n_params == sum(p.size for p in net.params) == (48 + 1) * 256 + 257 * 256 + 257
    with pytest.raises(DimensionError):
        net.forward(np.ones((1, 47)))


def test_ensemble_members_match_single_networks():
    ens = EnsembleMlp([5, 7, 4], 3, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(6, 5)).astype(np.float32)
    out = ens.forward(x)
    for j in range(3):
        np.testing.assert_allclose(out[j], ens.member(j).forward(x), rtol=1e-6, atol=1e-6)
    assert not np.allclose(out[0], out[1])


# --- Adam -------------------------------------------------------------------

def test_adam_zero_gradient_is_fixed_point():
    p = [np.array([1.0, -3.0])]
    adam_update(OptimizerState.for_params(p, lr=0.01), p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.0, -3.0])


def test_adam_first_step_is_lr_sized():
    p = [np.array([1.0, 1.0, 1.0])]
    adam_update(OptimizerState.for_params(p, lr=0.01), p, [np.array([0.5, -20.0, 1e-3])])
    np.testing.assert_allclose(p[0], [0.99, 1.01, 0.99], atol=1e-7)


def test_l2_shrinks_parameters():
    p = [np.array([10.0, -10.0])]
    st_ = OptimizerState.for_params(p, lr=0.01, l2=0.001)
    for _ in range(3):
        before = np.abs(p[0]).copy()
        adam_update(st_, p, [np.zeros(2)])
        assert np.all(np.abs(p[0]) < before)


def test_adam_minimises_quadratic():
    p = [np.array([4.0, -2.0])]
    st_ = OptimizerState.for_params(p, lr=0.05)
    for _ in range(500):
        adam_update(st_, p, [2 * p[0]])
    assert np.abs(p[0]).max() < 1e-2


# --- Polyak -----------------------------------------------------------------

def test_polyak_examples():
    t = [np.zeros(3)]
    polyak_update(t, [np.ones(3)], 0.01)
    np.testing.assert_allclose(t[0], 0.01)
    polyak_update(t, [np.full(3, 5.0)], 1.0)
    np.testing.assert_array_equal(t[0], 5.0)
    polyak_update(t, [np.zeros(3)], 0.0)
    np.testing.assert_array_equal(t[0], 5.0)
    with pytest.raises(ValueError):
        polyak_update(t, [np.zeros(3)], 1.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.integers(0, 2**31 - 1))
def test_polyak_is_contraction(tau, seed):
    rng = np.random.default_rng(seed)
    t, o = rng.normal(size=10), rng.normal(size=10)
    before = np.linalg.norm(t - o)
    new = polyak_update([t.copy()], [o], tau)[0]
    assert np.linalg.norm(new - o) <= (1 - tau) * before + 1e-12


# --- squashed Gaussian ------------------------------------------------------

def _head(mean, log_std):
    return GaussianPolicyHead(ad.const(np.asarray(mean, np.float64)), ad.const(np.asarray(log_std, np.float64)))


def test_standard_sample_log_prob():
    action, logp = squashed_gaussian_sample(_head([0, 0], [0, 0]), np.zeros(2))
    np.testing.assert_array_equal(action.value, [0, 0])
    assert float(logp.value) == pytest.approx(-np.log(2 * np.pi), abs=1e-5)
    assert float(logp.value) == pytest.approx(-1.8379, abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2), st.lists(st.floats(-20, 2), min_size=2, max_size=2),
       st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_actions_inside_box(mean, log_std, noise):
    action, _ = squashed_gaussian_sample(_head(np.float32(mean), np.float32(log_std)), np.float32(noise))
    assert np.all(np.abs(action.value.astype(np.float32)) <= 1.0)
    # float64 keeps strict interior for moderate pre-activations
    if np.all(np.abs(np.array(mean) + np.exp(log_std) * np.array(noise)) < 15):
        assert np.all(np.abs(action.value) < 1.0)


def test_sample_and_density_agree():
    rng = np.random.default_rng(4)
    mean, log_std = rng.normal(size=2), rng.uniform(-1, 0.5, size=2)
    noise = rng.normal(size=(50, 2))
    action, logp = squashed_gaussian_sample(_head(np.tile(mean, (50, 1)), np.tile(log_std, (50, 1))), noise)
    np.testing.assert_allclose(squashed_gaussian_log_prob(mean, log_std, action.value), logp.value, atol=1e-6)


def test_density_integrates_to_one():
    rng = np.random.default_rng(17)
    mean, log_std = rng.normal(0, 0.5, size=2), rng.uniform(-0.7, -0.2, size=2)
    edges = np.linspace(-1, 1, 201)
    mid = 0.5 * (edges[1:] + edges[:-1])
    ax, ay = np.meshgrid(mid, mid, indexing="ij")
    grid = np.stack([ax.ravel(), ay.ravel()], axis=1)
    dens = np.exp(squashed_gaussian_log_prob(mean, log_std, grid))
    assert dens.sum() * (2 / 200) ** 2 == pytest.approx(1.0, abs=0.02)


def test_log_std_is_clamped():
    out = ad.const(np.array([[0.0, 0.0, 9.0, -40.0]]))
    head = GaussianPolicyHead.from_output(out)
    np.testing.assert_array_equal(head.log_std.value, [[2.0, -20.0]])


# --- network files ----------------------------------------------------------

def test_network_file_round_trip(tmp_path):
    net = Mlp([3, 5, 2], np.random.default_rng(3))
    save_network(net, tmp_path / "net.bin")
    data = (tmp_path / "net.bin").read_bytes()
    assert np.frombuffer(data[:16], "<i4").tolist() == [3, 3, 5, 2]
    assert len(data) == 16 + 4 * net.n_params
    back = load_network(tmp_path / "net.bin")
    assert back.widths == net.widths
    for a, b in zip(net.params, back.params):
        np.testing.assert_array_equal(a, b)


def test_corrupt_network_files():
    good = encode_network([3, 5, 2], Mlp([3, 5, 2]).params)
    with pytest.raises(CheckpointError):
        decode_network(good[:-4])
    with pytest.raises(CheckpointError):
        decode_network(b"\x01")
    with pytest.raises(CheckpointError):
        load_network("/nonexistent/net.bin")


def test_adam_moments_never_go_subnormal():
    p = np.zeros(3, np.float32)
    opt = OptimizerState(lr=0.01)
    adam_update(opt, [p], [np.float32([1.0, 0.0, -1.0])])
    for _ in range(1000):  # 0.1 * 0.9**1000 is far below the smallest normal float32
        adam_update(opt, [p], [np.zeros(3, np.float32)])
    tiny = np.finfo(np.float32).tiny
    for arr in (p, opt.m[0], opt.v[0]):
        assert np.all((arr == 0) | (np.abs(arr) >= tiny))
    assert opt.m[0][1] == 0 and opt.m[0][0] == 0
