import numpy as np
import pytest
from hypothesis import given, strategies as st

from mambpo.core import (ContractViolation, InvalidActionError, Transition, as_joint_observation, discounted_return,
                         validate_joint_action)
from mambpo.envs import NavigationEnv, PredatorPreyEnv

finite = st.floats(-100, 100, allow_nan=False)


def test_discounted_return_examples():
    assert discounted_return([1, 1, 1], 1.0) == 3.0
    assert discounted_return([1, 1, 1], 0.95) == pytest.approx(2.8525, abs=1e-12)
    assert discounted_return([], 0.95) == 0.0


@given(st.lists(finite, min_size=1, max_size=30))
def test_gamma_zero_gives_first_reward(rewards):
    assert discounted_return(rewards, 0.0) == rewards[0]


def test_gamma_out_of_range():
    with pytest.raises(ValueError):
        discounted_return([1.0], 1.5)


@pytest.mark.parametrize("env_cls, dim", [(NavigationEnv, 14), (PredatorPreyEnv, 12)])
def test_reset_is_seeded(env_cls, dim):
    a, b = env_cls(), env_cls()
    o1, o2 = a.reset(7), b.reset(7)
    np.testing.assert_array_equal(o1, o2)
    assert o1.shape == (3, dim)
    assert not np.array_equal(a.reset(8), o1)


@pytest.mark.parametrize("env_cls", [NavigationEnv, PredatorPreyEnv])
def test_episode_ends_after_25_steps(env_cls):
    env = env_cls()
    env.reset(0)
    dones = [env.step(np.zeros((3, 2)))[2] for _ in range(25)]
    assert dones == [False] * 24 + [True]
    with pytest.raises(ContractViolation):
        env.step(np.zeros((3, 2)))


def test_step_before_reset():
    with pytest.raises(ContractViolation):
        NavigationEnv().step(np.zeros((3, 2)))


@pytest.mark.parametrize("env_cls", [NavigationEnv, PredatorPreyEnv])
def test_same_seed_same_actions_same_rewards(env_cls):
    acts = np.random.default_rng(0).uniform(-1, 1, (25, 3, 2))
    runs = []
    for _ in range(2):
        env = env_cls()
        env.reset(3)
        runs.append([env.step(a)[:2] for a in acts])
    for (o1, r1), (o2, r2) in zip(*runs):
        np.testing.assert_array_equal(o1, o2)
        assert r1 == r2
        assert o1.shape == (3, env.obs_dim)


def test_out_of_range_action_rejected():
    env = NavigationEnv()
    env.reset(0)
    bad = np.zeros((3, 2))
    bad[1, 0] = 1.5
    with pytest.raises(InvalidActionError):
        env.step(bad)
    with pytest.raises(InvalidActionError):
        validate_joint_action(np.full((3, 2), np.nan), 3)
    with pytest.raises(InvalidActionError):
        validate_joint_action(np.zeros((2, 2)), 3)


def test_transition_invariants():
    o = np.zeros((3, 14))
    Transition(o, np.zeros((3, 2)), 0.0, o, 24)
    with pytest.raises(ValueError):
        Transition(o, np.zeros((3, 2)), 0.0, o, 25)
    with pytest.raises(ValueError):
        Transition(o, np.zeros((3, 2)), float("inf"), o, 0)
    with pytest.raises(ValueError):
        Transition(o, np.zeros((3, 2)), 0.0, np.zeros((3, 12)), 0)


def test_joint_observation_validation():
    with pytest.raises(ValueError):
        as_joint_observation(np.zeros(14))
    with pytest.raises(ValueError):
        as_joint_observation(np.full((3, 14), np.inf))
    assert as_joint_observation(np.zeros((3, 14)), 3, 14).shape == (3, 14)
