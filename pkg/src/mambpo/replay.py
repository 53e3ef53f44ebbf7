"""Ring-buffer transition storage with uniform and mixed-source sampling."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Transition


class EmptyBufferError(RuntimeError):
    pass


@dataclass
class Batch:
    """Column-oriented batch of transitions; indexing yields :class:`Transition` records."""

    obs: np.ndarray  # (B, n_agents, obs_dim)
    action: np.ndarray  # (B, n_agents, action_dim)
    reward: np.ndarray  # (B,)
    next_obs: np.ndarray
    step_index: np.ndarray  # (B,) int

    def __len__(self) -> int:
        return len(self.reward)

    def __getitem__(self, i) -> Transition:
        return Transition(self.obs[i], self.action[i], float(self.reward[i]), self.next_obs[i], int(self.step_index[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def take(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.step_index[idx])

    @staticmethod
    def concat(batches) -> "Batch":
        return Batch(*(np.concatenate([getattr(b, f) for b in batches]) for f in
                       ("obs", "action", "reward", "next_obs", "step_index")))


class ReplayBuffer:
    def __init__(self, capacity: int, n_agents: int, obs_dim: int, action_dim: int = 2, name: str = "buffer"):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.name = name
        self.n_agents, self.obs_dim, self.action_dim = n_agents, obs_dim, action_dim
        self.obs = np.zeros((capacity, n_agents, obs_dim), np.float32)
        self.action = np.zeros((capacity, n_agents, action_dim), np.float32)
        self.reward = np.zeros(capacity, np.float32)
        self.next_obs = np.zeros((capacity, n_agents, obs_dim), np.float32)
        self.step_index = np.zeros(capacity, np.int32)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, transition: Transition) -> None:
        i = self.cursor
        self.obs[i] = transition.obs
        self.action[i] = transition.action
        self.reward[i] = transition.reward
        self.next_obs[i] = transition.next_obs
        self.step_index[i] = transition.step_index
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def push_batch(self, batch: Batch) -> None:
        for k in range(len(batch)):
            i = self.cursor
            self.obs[i], self.action[i], self.reward[i] = batch.obs[k], batch.action[k], batch.reward[k]
            self.next_obs[i], self.step_index[i] = batch.next_obs[k], batch.step_index[k]
            self.cursor = (i + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def _ordered_slots(self) -> np.ndarray:
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.cursor) % self.capacity

    def __iter__(self):
        """Oldest to newest."""
        batch = self.contents()
        return iter(batch)

    def contents(self) -> Batch:
        return self.take(self._ordered_slots())

    def take(self, slots) -> Batch:
        return Batch(self.obs[slots], self.action[slots], self.reward[slots], self.next_obs[slots], self.step_index[slots])

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise EmptyBufferError(f"cannot sample from empty {self.name}")
        return rng.integers(0, self.size, size=n)

    # dump/load: header then length-prefixed little-endian records
    def dump(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(b"MBRB")
            fh.write(struct.pack("<iiiq", self.n_agents, self.obs_dim, self.action_dim, self.size))
            for t in self:
                payload = (np.asarray(t.obs, "<f4").tobytes() + np.asarray(t.action, "<f4").tobytes()
                           + struct.pack("<f", t.reward) + np.asarray(t.next_obs, "<f4").tobytes()
                           + struct.pack("<i", t.step_index))
                fh.write(struct.pack("<I", len(payload)))
                fh.write(payload)

    @classmethod
    def load(cls, path, capacity: int | None = None, name: str = "buffer") -> "ReplayBuffer":
        data = Path(path).read_bytes()
        if data[:4] != b"MBRB":
            raise ValueError(f"{path}: not a replay dump")
        n_agents, obs_dim, action_dim, size = struct.unpack_from("<iiiq", data, 4)
        buf = cls(capacity or max(size, 1), n_agents, obs_dim, action_dim, name=name)
        off = 4 + struct.calcsize("<iiiq")
        no, na = n_agents * obs_dim, n_agents * action_dim
        for k in range(size):
            (length,) = struct.unpack_from("<I", data, off)
            off += 4
            rec = data[off : off + length]
            if len(rec) != length or length != 4 * (2 * no + na + 2):
                raise ValueError(f"{path}: record {k} is truncated or malformed")
            f = np.frombuffer(rec, "<f4", count=2 * no + na + 1)
            obs = f[:no].reshape(n_agents, obs_dim)
            act = f[no : no + na].reshape(n_agents, action_dim)
            rew = float(f[no + na])
            nxt = f[no + na + 1 :].reshape(n_agents, obs_dim)
            (step,) = struct.unpack_from("<i", rec, 4 * (2 * no + na + 1))
            buf.push(Transition(obs, act, rew, nxt, step))
            off += length
        return buf


def sample_batch(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform sampling with replacement over occupied slots."""
    return buffer.take(buffer.sample_indices(batch_size, rng))


def mixed_sample(real_buffer: ReplayBuffer, model_buffer: ReplayBuffer, batch_size: int,
                 real_fraction: float, rng: np.random.Generator) -> Batch:
    if not 0.0 <= real_fraction <= 1.0:
        raise ValueError("real_fraction must lie in [0, 1]")
    n_real = int(np.floor(real_fraction * batch_size + 0.5))
    n_model = batch_size - n_real
    parts = []
    if n_real:
        if len(real_buffer) == 0:
            raise EmptyBufferError(f"real-data source '{real_buffer.name}' is empty")
        parts.append(sample_batch(real_buffer, n_real, rng))
    if n_model:
        if len(model_buffer) == 0:
            raise EmptyBufferError(f"model-data source '{model_buffer.name}' is empty")
        parts.append(sample_batch(model_buffer, n_model, rng))
    batch = Batch.concat(parts)
    return batch.take(rng.permutation(batch_size))
