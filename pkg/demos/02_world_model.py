"""Fit the ensemble world model on navigation data from a random team.

Prints held-out NLL per member before and after one training call, the R² of
the mean prediction split into position and velocity dimensions, and the
reward-prediction bias, then rolls out a few one-step synthetic transitions.
"""
import numpy as np

from mambpo.core import Transition
from mambpo.envs import make_env
from mambpo.evaluation import dimension_labels, random_policy, r_squared
from mambpo.replay import ReplayBuffer
from mambpo.world_model import EnsembleDynamicsModel, ModelTrainConfig, sample_prediction, train_model

env = make_env("navigation")
team = random_policy(3, seed=1)
rng = np.random.default_rng(0)

buf = ReplayBuffer(5000, 3, env.obs_dim, name="B_env")
while len(buf) < 5000:
    obs = env.reset(int(rng.integers(2**31 - 1)))
    for step in range(25):
        action = team(obs)
        nxt, reward, _ = env.step(action)
        buf.push(Transition(obs, action, reward, nxt, step))
        obs = nxt

# a smaller ensemble than the default keeps the demo to about a minute
model = EnsembleDynamicsModel(3, env.obs_dim, hidden=(128, 128, 128), n_members=5, rng=rng)
report = train_model(model, buf, ModelTrainConfig(gradient_steps=300), rng)
print("held-out NLL per member, before:", np.round(report.initial_nll, 2))
print("                           after:", np.round(report.final_nll, 2))

# fresh transitions from the same random team, so the model is judged off its training data
fresh = ReplayBuffer(1000, 3, env.obs_dim, name="fresh")
while len(fresh) < 1000:
    obs = env.reset(int(rng.integers(2**31 - 1)))
    for step in range(25):
        action = team(obs)
        nxt, reward, _ = env.step(action)
        fresh.push(Transition(obs, action, reward, nxt, step))
        obs = nxt
quality = r_squared(model, fresh.contents(), dimension_labels("navigation", 3))
print("R² positions %.3f, velocities %.3f, reward bias %+.2f%%" % (
    quality.group_mean(False), quality.group_mean(True), quality.reward_bias))

batch = fresh.contents()
nxt, rew = sample_prediction(model, batch.obs[:3], batch.action[:3], rng)
print("synthetic rewards", np.round(rew, 3), "vs real", np.round(batch.reward[:3], 3))
