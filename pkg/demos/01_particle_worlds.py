"""A tour of the two particle tasks.

Spawns each task, shows what an agent observes, and runs a uniform-random team
for a few hundred episodes to show how rare reward events are before training.
"""
import numpy as np

from mambpo.envs import make_env, observe_predator, prey_heuristic
from mambpo.evaluation import (catch_success, evaluate_policy, navigation_failure, random_policy, success_rate)

np.set_printoptions(precision=3, suppress=True)

nav = make_env("navigation")
obs = nav.reset(7)
print("navigation: 3 agents, observation width", obs.shape[1])
print("agent 0 sees [vel, pos, landmarks rel (3x2), others rel (2x2)]:\n", obs[0])

pp = make_env("predator_prey")
obs = pp.reset(7)
print("\npredator-prey: 3 predators, observation width", obs.shape[1])
print("predator 0 sees [vel, pos, others rel (2x2), prey rel pos, prey rel vel]:\n", obs[0])
print("prey flees with acceleration", prey_heuristic(pp.state))

# the prey only reacts once a predator is inside its detection radius
for _ in range(25):
    obs, reward, done = pp.step(np.tile([[0.0, 0.0]], (3, 1)))
print("after 25 idle steps the team has reward", reward, "and predator 0 still observes", observe_predator(pp.state, 0)[-4:])

team = random_policy(3, seed=0)
recs = evaluate_policy(team, nav, 300, seed=0)
modes = [navigation_failure(r) for r in recs]
print("\nrandom team, navigation: success rate %.3f, mean return %.1f" % (
    success_rate(recs), np.mean([r.episode_return for r in recs])))
print("failure modes:", {m: modes.count(m) for m in sorted(set(modes))})

recs = evaluate_policy(team, pp, 300, seed=0)
print("random team, predator-prey: catch rate %.3f" % np.mean([catch_success(r) for r in recs]))
