"""Evaluation episodes, success and catch rates, world-model R² and reward bias."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Transition
from .envs import NavigationEnv, ParticleEnv, all_landmarks_covered, colliding_pairs, prey_caught
from .masac import AgentLearner, select_actions
from .replay import Batch, ReplayBuffer

log = logging.getLogger(__name__)


class WrongTaskError(ValueError):
    pass


@dataclass
class EpisodeRecord:
    task: str
    rewards: np.ndarray  # (25,)
    positions: np.ndarray  # (25, n_entities, 2), after each step
    velocities: np.ndarray
    collisions: np.ndarray  # (25,) colliding agent pairs per step
    covered: np.ndarray  # (25,) bool, navigation only
    caught: np.ndarray  # (25,) bool, predator-prey only

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


def _policy_fn(policy):
    if callable(policy):
        return policy
    return lambda obs: select_actions(policy, obs, "mean")


def random_policy(n_agents: int, action_dim: int = 2, seed=0):
    """Uniform joint actions in [-1, 1]; a baseline for the trained actors."""
    rng = np.random.default_rng(seed)
    return lambda obs: rng.uniform(-1.0, 1.0, size=(n_agents, action_dim))


def evaluate_policy(actors, env: ParticleEnv, episodes: int, seed: int) -> list[EpisodeRecord]:
    """Run ``episodes`` episodes with deterministic (mean) actions.

    ``actors`` is a list of learners or any callable mapping a joint observation
    to a joint action. Episode seeds are drawn from ``seed``.
    """
    rng = np.random.default_rng(seed)
    act = _policy_fn(actors)
    task = "navigation" if isinstance(env, NavigationEnv) else "predator_prey"
    records = []
    for _ in range(episodes):
        obs = env.reset(int(rng.integers(2**31 - 1)))
        cols = {k: [] for k in ("rewards", "positions", "velocities", "collisions", "covered", "caught")}
        done = False
        while not done:
            obs, reward, done = env.step(act(obs))
            s = env.state
            cols["rewards"].append(reward)
            cols["positions"].append(s.positions())
            cols["velocities"].append(s.velocities())
            cols["collisions"].append(len(colliding_pairs(s.agents)))
            cols["covered"].append(task == "navigation" and all_landmarks_covered(s, env.scenario))
            cols["caught"].append(task == "predator_prey" and prey_caught(s, env.scenario))
        records.append(EpisodeRecord(task, *(np.asarray(cols[k]) for k in
                                             ("rewards", "positions", "velocities", "collisions", "covered", "caught"))))
    return records


def _require(record: EpisodeRecord, task: str) -> None:
    if record.task != task:
        raise WrongTaskError(f"expected a {task} record, got {record.task}")


def success_navigation(record: EpisodeRecord) -> bool:
    """All landmarks covered at some step and no collision at any step."""
    _require(record, "navigation")
    return bool(record.covered.any() and record.collisions.sum() == 0)


def catch_success(record: EpisodeRecord) -> bool:
    _require(record, "predator_prey")
    return bool(record.caught.any())


def navigation_failure(record: EpisodeRecord) -> str:
    """One of ``success``, ``collision``, ``coverage`` or ``both``."""
    _require(record, "navigation")
    collided = record.collisions.sum() > 0
    uncovered = not record.covered.any()
    if collided and uncovered:
        return "both"
    if collided:
        return "collision"
    if uncovered:
        return "coverage"
    return "success"


def success_rate(records: list[EpisodeRecord]) -> float:
    if not records:
        raise ValueError("no records")
    fn = success_navigation if records[0].task == "navigation" else catch_success
    return float(np.mean([fn(r) for r in records]))


def summarize(records: list[EpisodeRecord]) -> dict:
    returns = np.array([r.episode_return for r in records])
    out = {"task": records[0].task, "episodes": len(records), "mean_return": float(returns.mean()),
           "sem_return": float(returns.std(ddof=1) / np.sqrt(len(returns))) if len(returns) > 1 else 0.0}
    if records[0].task == "navigation":
        out["success_rate"] = success_rate(records)
        kinds = [navigation_failure(r) for r in records]
        out["failure_modes"] = {k: kinds.count(k) for k in ("collision", "coverage", "both")}
    else:
        out["catch_rate"] = success_rate(records)
    return out


# --- model quality ----------------------------------------------------------

def observation_labels(task: str) -> list[str]:
    if task == "navigation":
        parts = ["vel", "pos", "landmark0_rel", "landmark1_rel", "landmark2_rel", "other0_rel", "other1_rel"]
    else:
        parts = ["vel", "pos", "other0_rel", "other1_rel", "prey_rel", "prey_rel_vel"]
    return [f"{p}_{ax}" for p in parts for ax in ("x", "y")]


def dimension_labels(task: str, n_agents: int) -> list[str]:
    obs = observation_labels(task)
    return [f"agent{i}.{name}" for i in range(n_agents) for name in obs] + ["reward"]


def is_velocity(label: str) -> bool:
    return "vel" in label.split(".")[-1]


@dataclass
class ModelQualityReport:
    labels: list[str]
    r2: np.ndarray  # nan where the target has no variance
    reward_bias: float
    bias_is_relative: bool
    n_samples: int
    undefined: list[str] = field(default_factory=list)

    @property
    def mean_r2(self) -> float:
        return float(np.nanmean(self.r2))

    def group_mean(self, velocity: bool) -> float:
        """Mean R² over next-observation dimensions that are (or are not) velocities."""
        sel = [k for k, lb in enumerate(self.labels) if lb != "reward" and is_velocity(lb) == velocity]
        return float(np.nanmean(self.r2[sel]))

    def as_dict(self) -> dict:
        return {"n_samples": self.n_samples, "mean_r2": self.mean_r2,
                "position_r2": self.group_mean(False), "velocity_r2": self.group_mean(True),
                "reward_bias_percent" if self.bias_is_relative else "reward_bias_absolute": self.reward_bias,
                "undefined_dimensions": self.undefined}


def r2_per_dimension(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    pred, target = np.asarray(pred, np.float64), np.asarray(target, np.float64)
    ss_res = ((pred - target) ** 2).sum(axis=0)
    ss_tot = ((target - target.mean(axis=0)) ** 2).sum(axis=0)
    out = np.full(target.shape[1], np.nan)
    ok = ss_tot > 1e-12 * max(1, len(target))
    out[ok] = 1.0 - ss_res[ok] / ss_tot[ok]
    return out


def bias_percentage(predicted_mean: float, real_mean: float) -> tuple[float, bool]:
    """Signed bias ``(predicted - real) / real * 100``.

    Dividing by the signed real mean reproduces the signs reported for negative
    reward tasks. Returns ``(predicted - real, False)`` when the real mean is zero.
    """
    if real_mean == 0.0:
        return predicted_mean - real_mean, False
    return (predicted_mean - real_mean) / real_mean * 100.0, True


def _predictions(model, batch: Batch):
    next_obs, reward = model.predict_mean(batch.obs, batch.action)
    b = len(batch)
    pred = np.concatenate([next_obs.reshape(b, -1), reward.reshape(b, 1)], axis=1)
    target = np.concatenate([batch.next_obs.reshape(b, -1), batch.reward.reshape(b, 1)], axis=1)
    return pred, target


def reward_bias(model, batch: Batch) -> float:
    pred, target = _predictions(model, batch)
    value, relative = bias_percentage(float(pred[:, -1].mean()), float(target[:, -1].mean()))
    if not relative:
        log.warning("mean real reward is zero; reporting the absolute reward difference instead")
    return value


def r_squared(model, batch: Batch, labels: list[str] | None = None) -> ModelQualityReport:
    """Per-dimension R² of the ensemble-mean prediction of next observation and reward."""
    if len(batch) < 2:
        raise ValueError("need at least 2 transitions")
    pred, target = _predictions(model, batch)
    labels = labels or [f"dim{k}" for k in range(pred.shape[1] - 1)] + ["reward"]
    r2 = r2_per_dimension(pred, target)
    undefined = [labels[k] for k in np.flatnonzero(np.isnan(r2))]
    if undefined:
        log.warning("zero-variance targets excluded from the mean R²: %s", ", ".join(undefined))
    bias, relative = bias_percentage(float(pred[:, -1].mean()), float(target[:, -1].mean()))
    return ModelQualityReport(labels, r2, bias, relative, len(batch), undefined)


def collect_transitions(learners: list[AgentLearner], env: ParticleEnv, n: int, seed: int) -> Batch:
    """Fresh on-policy transitions (stochastic actions), whole episodes, at least ``n`` of them."""
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(n + env.episode_length, env.n_agents, env.obs_dim, env.action_dim, name="fresh")
    while len(buf) < n:
        obs = env.reset(int(rng.integers(2**31 - 1)))
        for step in range(env.episode_length):
            action = select_actions(learners, obs, "stochastic", rng)
            next_obs, reward, _ = env.step(action)
            buf.push(Transition(obs, action, reward, next_obs, step))
            obs = next_obs
    return buf.contents()


# --- smoothing and files ----------------------------------------------------

def moving_average(series, window: int = 200) -> np.ndarray:
    """Trailing mean over ``min(window, i + 1)`` points; same length as the input."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def write_episode_csv(records: list[EpisodeRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "return", "collision_steps", "any_covered", "any_caught", "success"])
        fn = success_navigation if records and records[0].task == "navigation" else catch_success
        for k, r in enumerate(records):
            w.writerow([k, format(r.episode_return, ".9g"), int((r.collisions > 0).sum()), int(r.covered.any()),
                        int(r.caught.any()), int(fn(r))])


def write_quality_csv(report: ModelQualityReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dimension", "r2"])
        for lb, v in zip(report.labels, report.r2):
            w.writerow([lb, "" if np.isnan(v) else format(float(v), ".9g")])


def write_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
