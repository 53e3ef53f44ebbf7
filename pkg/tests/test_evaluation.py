import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mambpo.envs import make_env
from mambpo.evaluation import (EpisodeRecord, WrongTaskError, bias_percentage, catch_success, dimension_labels,
                               evaluate_policy, is_velocity, moving_average, navigation_failure, r2_per_dimension,
                               r_squared, random_policy, success_navigation, success_rate, summarize)
from mambpo.masac import SacHyperparams, make_learners
from mambpo.replay import Batch


def record(task="navigation", covered=(), collisions=(), caught=()):
    flags = lambda steps: np.isin(np.arange(25), steps)  # noqa: E731
    col = np.zeros(25, int)
    col[list(collisions)] = 1
    return EpisodeRecord(task, np.zeros(25), np.zeros((25, 6, 2)), np.zeros((25, 6, 2)), col,
                         flags(covered), flags(caught))


# --- success and catch ------------------------------------------------------

def test_navigation_success_examples():
    assert success_navigation(record(covered=[5]))
    assert not success_navigation(record(covered=[5], collisions=[4]))
    assert not success_navigation(record())


def test_failure_modes():
    assert navigation_failure(record(covered=[5])) == "success"
    assert navigation_failure(record(covered=[5], collisions=[4])) == "collision"
    assert navigation_failure(record()) == "coverage"
    assert navigation_failure(record(collisions=[0])) == "both"


def test_catch_examples():
    assert catch_success(record("predator_prey", caught=[24]))
    assert catch_success(record("predator_prey", caught=range(25)))
    assert not catch_success(record("predator_prey"))


def test_wrong_task():
    with pytest.raises(WrongTaskError):
        catch_success(record("navigation"))
    with pytest.raises(WrongTaskError):
        success_navigation(record("predator_prey"))


def test_rates_in_unit_interval():
    recs = [record("predator_prey", caught=[3]), record("predator_prey")]
    assert success_rate(recs) == 0.5
    s = summarize(recs)
    assert s["catch_rate"] == 0.5 and s["episodes"] == 2


# --- evaluation runs --------------------------------------------------------

def test_evaluate_policy_records():
    env = make_env("predator_prey")
    learners = make_learners([12] * 3, 2, SacHyperparams(), np.random.default_rng(0))
    recs = evaluate_policy(learners, env, 250, seed=3)
    assert len(recs) == 250
    assert all(r.rewards.shape == (25,) for r in recs)
    again = evaluate_policy(learners, env, 250, seed=3)
    assert [r.episode_return for r in recs] == [r.episode_return for r in again]
    assert 0.0 <= success_rate(recs) <= 1.0


def test_random_policy_is_seeded():
    env = make_env("navigation")
    a = evaluate_policy(random_policy(3, seed=1), env, 5, seed=0)
    b = evaluate_policy(random_policy(3, seed=1), env, 5, seed=0)
    assert [r.episode_return for r in a] == [r.episode_return for r in b]


# --- model quality ----------------------------------------------------------

def test_bias_worked_examples():
    neg, rel = bias_percentage(-4.94, -4.95)
    assert rel and neg == pytest.approx(-0.20202, abs=1e-4)
    assert abs(neg - (-0.13)) <= 0.1  # reported value, rounding slack
    pos, _ = bias_percentage(5.51, 5.43)
    assert pos == pytest.approx(1.4733, abs=1e-4)
    assert abs(pos - 1.39) <= 0.1
    assert bias_percentage(3.0, 3.0) == (0.0, True)
    assert bias_percentage(0.5, 0.0) == (0.5, False)


def test_r2_definitions():
    rng = np.random.default_rng(0)
    y = rng.normal(size=(100, 4))
    np.testing.assert_allclose(r2_per_dimension(y, y), 1.0)
    np.testing.assert_allclose(r2_per_dimension(np.tile(y.mean(0), (100, 1)), y), 0.0, atol=1e-12)
    y[:, 2] = 3.0
    assert np.isnan(r2_per_dimension(y + 0.1, y)[2])


class _OracleModel:
    """Predicts next observations exactly and rewards with a fixed offset."""

    def __init__(self, offset=0.0):
        self.offset = offset

    def predict_mean(self, obs, actions):
        return obs * 0.5 + actions.sum(-1, keepdims=True), (obs.sum(axis=(1, 2)) + self.offset)


def _oracle_batch(n=200):
    rng = np.random.default_rng(1)
    obs = rng.normal(size=(n, 3, 14)).astype(np.float32)
    act = rng.uniform(-1, 1, size=(n, 3, 2)).astype(np.float32)
    nxt, rew = _OracleModel().predict_mean(obs, act)
    return Batch(obs, act, rew - 0.0, nxt, np.zeros(n, int))


def test_r_squared_report():
    batch = _oracle_batch()
    rep = r_squared(_OracleModel(), batch, dimension_labels("navigation", 3))
    assert len(rep.labels) == 43 and rep.labels[-1] == "reward"
    np.testing.assert_allclose(rep.r2, 1.0, atol=1e-6)
    assert rep.reward_bias == pytest.approx(0.0, abs=1e-6)
    shifted = r_squared(_OracleModel(offset=1.0), batch)
    real = float(batch.reward.mean())
    assert shifted.reward_bias == pytest.approx(100.0 / real, rel=1e-4)


def test_velocity_labels():
    labels = dimension_labels("predator_prey", 3)
    vel = [lb for lb in labels if is_velocity(lb)]
    assert vel[:4] == ["agent0.vel_x", "agent0.vel_y", "agent0.prey_rel_vel_x", "agent0.prey_rel_vel_y"]
    assert len(vel) == 12 and not is_velocity("reward")


# --- smoothing --------------------------------------------------------------

def test_moving_average_examples():
    np.testing.assert_array_equal(moving_average([0, 1], 2), [0, 0.5])
    np.testing.assert_array_equal(moving_average([4.0] * 7, 3), [4.0] * 7)
    x = np.arange(10.0)
    np.testing.assert_array_equal(moving_average(x, 1), x)
    assert len(moving_average(np.zeros(5000), 200)) == 5000
    with pytest.raises(ValueError):
        moving_average(x, 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=60), st.integers(1, 80))
def test_moving_average_matches_loop(series, window):
    expected = [np.mean(series[max(0, i - window + 1): i + 1]) for i in range(len(series))]
    np.testing.assert_allclose(moving_average(series, window), expected, rtol=1e-9, atol=1e-9)
