"""Ensemble of stochastic networks predicting next joint observation and reward."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .masac import AgentLearner, sample_actions
from .nn import CheckpointError, EnsembleMlp, OptimizerState, adam_update
from .replay import Batch, ReplayBuffer

log = logging.getLogger(__name__)


class UntrainedModelError(RuntimeError):
    pass


@dataclass
class ModelTrainConfig:
    interval: int = 250
    gradient_steps: int = 500
    batch: int = 512
    lr: float = 0.01
    l2: float = 0.001
    holdout_fraction: float = 0.1

    def __post_init__(self):
        for name in ("interval", "gradient_steps", "batch", "lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class InputNormalizer:
    def __init__(self, dim: int):
        self.mean = np.zeros(dim, np.float32)
        self.std = np.ones(dim, np.float32)
        self.count = 0

    @property
    def initialized(self) -> bool:
        return self.count >= 2

    def fit(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64)
        self.count = len(x)
        self.mean = x.mean(axis=0).astype(np.float32)
        std = x.std(axis=0)
        self.std = np.where(std < 1e-6, 1.0, std).astype(np.float32)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if not self.initialized:
            raise UntrainedModelError("input normalizer has not seen enough data (need >= 2 samples)")
        return (np.asarray(x, np.float32) - self.mean) / self.std

    def encode(self) -> bytes:
        return (struct.pack("<iq", len(self.mean), self.count) + self.mean.astype("<f4").tobytes()
                + self.std.astype("<f4").tobytes())

    @classmethod
    def decode(cls, data: bytes, segment: str = "normalizer") -> "InputNormalizer":
        if len(data) < 12:
            raise CheckpointError(segment, "truncated header")
        dim, count = struct.unpack_from("<iq", data, 0)
        if len(data) != 12 + 8 * dim:
            raise CheckpointError(segment, f"expected {2 * dim} floats")
        norm = cls(dim)
        norm.count = count
        norm.mean = np.frombuffer(data, "<f4", dim, 12).astype(np.float32)
        norm.std = np.frombuffer(data, "<f4", dim, 12 + 4 * dim).astype(np.float32)
        return norm


def bound_log_var(raw, lo: float, hi: float, sharpness: float = 2.0):
    """Two-stage softplus squashing of raw log-variances into ``[lo, hi]``.

    The second stage lifts very large inputs slightly above ``hi`` (by at most
    ``softplus(sharpness * (hi - lo)) / sharpness - (hi - lo)``), so the result is
    finally clipped. The clip only engages where the softplus slope is already tiny.
    """
    if isinstance(raw, ad.Var):
        lv = ad.add(ad.neg(ad.softplus(ad.add(ad.neg(raw), hi), sharpness)), hi)
        return ad.clip(ad.add(ad.softplus(ad.add(lv, -lo), sharpness), lo), lo, hi)
    raw = np.asarray(raw)
    lv = hi - np.logaddexp(0.0, sharpness * (hi - raw)) / sharpness
    return np.clip(lo + np.logaddexp(0.0, sharpness * (lv - lo)) / sharpness, lo, hi)


@dataclass
class TrainReport:
    skipped: bool = False
    initial_nll: list[float] = field(default_factory=list)
    final_nll: list[float] = field(default_factory=list)
    n_train: int = 0
    n_holdout: int = 0

    @property
    def mean_final_nll(self) -> float:
        return float(np.mean(self.final_nll)) if self.final_nll else float("nan")


class EnsembleDynamicsModel:
    def __init__(self, n_agents: int, obs_dim: int, action_dim: int = 2, hidden=(200, 200, 200, 200),
                 n_members: int = 10, logvar_min: float = -5.0, logvar_max: float = -2.0,
                 normalize: bool = True, lr: float = 0.01, l2: float = 0.001, sharpness: float = 2.0,
                 rng: np.random.Generator | None = None):
        self.n_agents, self.obs_dim, self.action_dim = n_agents, obs_dim, action_dim
        self.in_dim = n_agents * (obs_dim + action_dim)
        self.out_dim = n_agents * obs_dim + 1
        self.hidden = tuple(hidden)
        self.n_members = n_members
        self.logvar_min, self.logvar_max, self.sharpness = logvar_min, logvar_max, sharpness
        self.normalize = normalize
        self.net = EnsembleMlp([self.in_dim, *self.hidden, 2 * self.out_dim], n_members, rng)
        self.normalizer = InputNormalizer(self.in_dim)
        self.opt = OptimizerState.for_params(self.net.params, lr, l2)
        self.trained = False

    # inputs / targets ------------------------------------------------------
    def raw_inputs(self, obs, actions) -> np.ndarray:
        obs, actions = np.asarray(obs, np.float32), np.asarray(actions, np.float32)
        b = obs.shape[0]
        return np.concatenate([obs.reshape(b, -1), actions.reshape(b, -1)], axis=1)

    def inputs(self, obs, actions) -> np.ndarray:
        x = self.raw_inputs(obs, actions)
        return self.normalizer(x) if self.normalize else x

    def targets(self, batch: Batch) -> np.ndarray:
        b = len(batch)
        delta = (batch.next_obs - batch.obs).reshape(b, -1)
        return np.concatenate([delta, batch.reward.reshape(b, 1)], axis=1).astype(np.float32)

    # forward passes --------------------------------------------------------
    def _split(self, out):
        if isinstance(out, ad.Var):
            mean = out[..., : self.out_dim]
            raw = out[..., self.out_dim :]
        else:
            mean, raw = out[..., : self.out_dim], out[..., self.out_dim :]
        return mean, bound_log_var(raw, self.logvar_min, self.logvar_max, self.sharpness)

    def forward_all(self, obs, actions) -> tuple[np.ndarray, np.ndarray]:
        """Means and bounded log-variances of every member, shape ``(members, batch, out_dim)``."""
        if self.normalize and not self.normalizer.initialized:
            raise UntrainedModelError("model inputs cannot be normalized before training data is seen")
        mean, lv = self._split(self.net.forward(self.inputs(obs, actions)))
        return mean, lv.astype(np.float32)

    def member_forward(self, member: int, obs, actions) -> tuple[np.ndarray, np.ndarray]:
        mean, lv = self.forward_all(obs, actions)
        return mean[member], lv[member]

    def predict_mean(self, obs, actions) -> tuple[np.ndarray, np.ndarray]:
        """Ensemble average of member means as ``(next_obs, reward)``."""
        mean, _ = self.forward_all(obs, actions)
        avg = mean.mean(axis=0)
        obs = np.asarray(obs, np.float32)
        next_obs = obs + avg[:, :-1].reshape(obs.shape)
        return next_obs, avg[:, -1]

    def nll_graph(self, x: np.ndarray, y: np.ndarray, leaves) -> ad.Var:
        """Per-member NLL (vector over members) for member-specific inputs ``(E, B, in)``."""
        mean, lv = self._split(self.net(ad.const(x), leaves))
        err = ad.square(ad.add(mean, ad.const(-y)))
        per_elem = ad.add(ad.mul(ad.mul(err, ad.exp(ad.neg(lv))), 0.5), ad.mul(lv, 0.5))
        return ad.mean(ad.sum(per_elem, axis=-1), axis=-1)

    def member_nll(self, batch: Batch) -> np.ndarray:
        """Mean NLL of each member on ``batch`` (constants dropped)."""
        mean, lv = self.forward_all(batch.obs, batch.action)
        return nll_values(mean, lv, self.targets(batch))


def nll_values(mean: np.ndarray, log_var: np.ndarray, targets: np.ndarray) -> np.ndarray:
    per = (targets - mean) ** 2 / (2.0 * np.exp(log_var)) + log_var / 2.0
    return per.sum(axis=-1).mean(axis=-1)


def model_forward(model: EnsembleDynamicsModel, member: int, joint_obs, joint_action):
    return model.member_forward(member, joint_obs, joint_action)


def model_nll_loss(model: EnsembleDynamicsModel, member: int, batch: Batch) -> float:
    return float(model.member_nll(batch)[member])


def train_model(model: EnsembleDynamicsModel, env_buffer: ReplayBuffer, config: ModelTrainConfig,
                rng: np.random.Generator, member_rngs: list[np.random.Generator] | None = None) -> TrainReport:
    """Maximum-likelihood fit of every member on the environment buffer.

    A ``holdout_fraction`` split is reserved at call time for reporting the
    per-member NLL before and after training; members draw independent uniform
    batches from the remaining data.
    """
    if len(env_buffer) < config.batch:
        log.info("model training skipped: %d transitions < batch %d", len(env_buffer), config.batch)
        return TrainReport(skipped=True)
    data = env_buffer.contents()
    model.normalizer.fit(model.raw_inputs(data.obs, data.action))
    x_all = model.inputs(data.obs, data.action)
    y_all = model.targets(data)
    n = len(data)
    perm = rng.permutation(n)
    n_hold = int(config.holdout_fraction * n)
    hold, train = perm[:n_hold], perm[n_hold:]
    report = TrainReport(n_train=len(train), n_holdout=n_hold)

    def holdout_nll():
        if n_hold == 0:
            return [float("nan")] * model.n_members
        mean, lv = model._split(model.net.forward(x_all[hold]))
        return nll_values(mean, lv, y_all[hold]).tolist()

    report.initial_nll = holdout_nll()
    if member_rngs is None:
        # seeded by draws rather than rng.spawn(), whose child counter is not part of the saved generator state
        member_rngs = [np.random.default_rng(s) for s in rng.integers(0, 2**63, size=model.n_members)]
    model.opt.lr, model.opt.l2 = config.lr, config.l2
    for _ in range(config.gradient_steps):
        idx = np.stack([train[g.integers(0, len(train), size=config.batch)] for g in member_rngs])
        leaves = model.net.leaves()
        loss = ad.sum(model.nll_graph(x_all[idx], y_all[idx], leaves))
        grads = ad.gradient(loss, leaves)
        adam_update(model.opt, model.net.params, grads)
    model.trained = True
    report.final_nll = holdout_nll()
    return report


def sample_prediction(model: EnsembleDynamicsModel, joint_obs, joint_action, rng: np.random.Generator,
                      noise_scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Draw a member uniformly per sample, then sample its Gaussian output.

    Accepts a single joint observation ``(n, d)`` or a batch ``(B, n, d)``.
    """
    single = np.ndim(joint_obs) == 2
    obs = np.asarray(joint_obs, np.float32)[None] if single else np.asarray(joint_obs, np.float32)
    act = np.asarray(joint_action, np.float32)[None] if single else np.asarray(joint_action, np.float32)
    b = obs.shape[0]
    mean, lv = model.forward_all(obs, act)
    members = rng.integers(0, model.n_members, size=b)
    rows = np.arange(b)
    mu, std = mean[members, rows], np.exp(0.5 * lv[members, rows])
    sample = mu + noise_scale * std * rng.standard_normal(mu.shape).astype(np.float32)
    next_obs = obs + sample[:, :-1].reshape(obs.shape)
    reward = sample[:, -1]
    if single:
        return next_obs[0], float(reward[0])
    return next_obs, reward


def generate_rollouts(model: EnsembleDynamicsModel, env_buffer: ReplayBuffer, model_buffer: ReplayBuffer,
                      learners: list[AgentLearner], n_rollouts: int, length: int, rng: np.random.Generator) -> int:
    """Branch ``n_rollouts`` short model rollouts from stored real observations."""
    if not model.trained:
        raise UntrainedModelError("world model must be trained before generating rollouts")
    if length < 1:
        raise ValueError("rollout length must be >= 1")
    idx = env_buffer.sample_indices(n_rollouts, rng)
    obs = env_buffer.obs[idx]
    steps = env_buffer.step_index[idx].copy()
    for _ in range(length):
        actions, _ = sample_actions(learners, obs, rng)
        next_obs, reward = sample_prediction(model, obs, actions, rng)
        model_buffer.push_batch(Batch(obs, actions, reward, next_obs, steps))
        obs = next_obs
        steps = np.minimum(steps + 1, 24)
    return n_rollouts * length
