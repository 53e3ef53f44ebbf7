"""Dec-POMDP building blocks shared by every other module.

A joint observation is stored as an ``(n_agents, obs_dim)`` array and a joint
action as an ``(n_agents, action_dim)`` array with entries in ``[-1, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

EPISODE_LENGTH = 25


class ContractViolation(RuntimeError):
    """Raised when an environment is used outside its interaction contract."""


class InvalidActionError(ValueError):
    pass


def as_joint_observation(obs, n_agents: int | None = None, obs_dim: int | None = None) -> np.ndarray:
    arr = np.asarray(obs, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"joint observation must be 2-D (agents, dim), got shape {arr.shape}")
    if n_agents is not None and arr.shape[0] != n_agents:
        raise ValueError(f"expected {n_agents} agents, got {arr.shape[0]}")
    if obs_dim is not None and arr.shape[1] != obs_dim:
        raise ValueError(f"expected observation dimension {obs_dim}, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("joint observation contains non-finite entries")
    return arr


def validate_joint_action(action, n_agents: int, action_dim: int = 2) -> np.ndarray:
    arr = np.asarray(action, dtype=np.float64)
    if arr.shape != (n_agents, action_dim):
        raise InvalidActionError(f"joint action must have shape {(n_agents, action_dim)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidActionError("joint action contains non-finite entries")
    if np.any(np.abs(arr) > 1.0):
        raise InvalidActionError(f"joint action components must lie in [-1, 1], max |a| = {np.abs(arr).max():.4g}")
    return arr


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    step_index: int

    def __post_init__(self):
        if np.shape(self.obs) != np.shape(self.next_obs):
            raise ValueError("obs and next_obs must have identical shape")
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")
        if not 0 <= self.step_index < EPISODE_LENGTH:
            raise ValueError(f"step_index {self.step_index} outside [0, {EPISODE_LENGTH})")


class Environment:
    """Interaction contract: ``reset(seed)`` then up to 25 ``step`` calls."""

    n_agents: int
    obs_dim: int
    action_dim: int = 2
    episode_length: int = EPISODE_LENGTH

    def reset(self, seed: int) -> np.ndarray:
        raise NotImplementedError

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        raise NotImplementedError

    @property
    def obs_dims(self) -> list[int]:
        return [self.obs_dim] * self.n_agents


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    total = 0.0
    for k, r in enumerate(rewards):
        total += gamma**k * r
    return float(total)
