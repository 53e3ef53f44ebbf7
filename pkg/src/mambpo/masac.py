"""Multi-agent soft actor-critic with decentralized actors and centralized critics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .nn import GaussianPolicyHead, Mlp, OptimizerState, adam_update, polyak_update, squashed_gaussian_sample
from .replay import Batch


@dataclass(frozen=True)
class SacHyperparams:
    gamma: float = 0.95
    tau: float = 0.01
    lr_actor: float = 0.003
    lr_critic: float = 0.003
    lr_alpha: float = 0.003
    batch: int = 256
    target_entropy: float = -2.0
    initial_alpha: float = 0.1
    actor_hidden: tuple = (128, 128)
    critic_hidden: tuple = (256, 256)
    twin_critics: bool = True

    def __post_init__(self):
        for name in ("gamma", "tau", "lr_actor", "lr_critic", "lr_alpha", "batch", "initial_alpha"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class AgentLearner:
    """Actor over the agent's own observation plus centralized critics over the joint input."""

    def __init__(self, index: int, obs_dims: list[int], action_dim: int = 2,
                 hp: SacHyperparams = SacHyperparams(), rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(index)
        self.index = index
        self.obs_dims = list(obs_dims)
        self.action_dim = action_dim
        self.hp = hp
        self.actor = Mlp([obs_dims[index], *hp.actor_hidden, 2 * action_dim], rng)
        critic_in = sum(obs_dims) + len(obs_dims) * action_dim
        n_critics = 2 if hp.twin_critics else 1
        self.critics = [Mlp([critic_in, *hp.critic_hidden, 1], rng) for _ in range(n_critics)]
        self.target_critics = [c.copy() for c in self.critics]
        self.log_alpha = np.array([np.log(hp.initial_alpha)], dtype=np.float64)
        self.actor_opt = OptimizerState.for_params(self.actor.params, hp.lr_actor)
        self.critic_opt = OptimizerState.for_params(self.critic_params, hp.lr_critic)
        self.alpha_opt = OptimizerState.for_params([self.log_alpha], hp.lr_alpha)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    @property
    def critic_params(self) -> list[np.ndarray]:
        return [p for c in self.critics for p in c.params]

    @property
    def target_params(self) -> list[np.ndarray]:
        return [p for c in self.target_critics for p in c.params]

    def head(self, own_obs, leaves=None) -> GaussianPolicyHead:
        return GaussianPolicyHead.from_output(self.actor(own_obs, leaves), self.action_dim)


def critic_input(obs: np.ndarray, actions) -> ad.Var:
    """Flattened joint observation followed by the flattened joint action."""
    b = obs.shape[0]
    if isinstance(actions, ad.Var):
        return ad.concat([ad.const(obs.reshape(b, -1).astype(np.float32, copy=False)), ad.reshape(actions, (b, -1))])
    return ad.const(np.concatenate([obs.reshape(b, -1), actions.reshape(b, -1)], axis=1).astype(np.float32))


def min_q(critics: list[Mlp], x: ad.Var, leaves: list[list[ad.Var]] | None = None) -> ad.Var:
    qs = [c(x, None if leaves is None else leaves[k]) for k, c in enumerate(critics)]
    q = qs[0]
    for other in qs[1:]:
        q = ad.minimum(q, other)
    return ad.reshape(q, (q.shape[0],))


def sample_actions(learners: list[AgentLearner], joint_obs: np.ndarray, rng: np.random.Generator):
    """Reparameterised samples for every agent from its own observation (no graph kept).

    ``joint_obs`` is ``(batch, n_agents, obs_dim)``; returns actions ``(batch, n, a)``
    and per-agent log-probabilities ``(batch, n)``.
    """
    b = joint_obs.shape[0]
    actions = np.empty((b, len(learners), learners[0].action_dim), np.float32)
    logps = np.empty((b, len(learners)), np.float32)
    for j, ln in enumerate(learners):
        noise = rng.standard_normal((b, ln.action_dim))
        a, lp = squashed_gaussian_sample(ln.head(joint_obs[:, j]), noise)
        actions[:, j], logps[:, j] = a.value, lp.value
    return actions, logps


def select_actions(learners: list[AgentLearner], joint_obs, mode: str = "stochastic",
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Decentralized action selection: agent ``i`` only ever sees ``joint_obs[i]``."""
    joint_obs = np.asarray(joint_obs)
    if len(learners) != joint_obs.shape[0]:
        raise ValueError("need exactly one learner per agent")
    out = np.empty((len(learners), learners[0].action_dim))
    for i, ln in enumerate(learners):
        raw = ln.actor.forward(joint_obs[i][None, :])[0]
        if mode == "mean":
            out[i] = np.tanh(raw[: ln.action_dim])
        elif mode == "stochastic":
            noise = rng.standard_normal((1, ln.action_dim))
            a, _ = squashed_gaussian_sample(ln.head(joint_obs[i][None, :]), noise)
            out[i] = a.value[0]
        else:
            raise ValueError(f"unknown action mode {mode!r}")
    return out


def td_target(learner: AgentLearner, next_obs: np.ndarray, rewards: np.ndarray, next_actions: np.ndarray,
              next_log_prob: np.ndarray, alpha: float, gamma: float) -> np.ndarray:
    """Soft TD target using the target critics; ``next_log_prob`` is the learner's own log-prob."""
    q_next = min_q(learner.target_critics, critic_input(next_obs, next_actions)).value
    return rewards + gamma * (q_next - alpha * next_log_prob)


def critic_loss(learner: AgentLearner, obs: np.ndarray, actions: np.ndarray, targets: np.ndarray,
                leaves: list[list[ad.Var]] | None = None) -> ad.Var:
    """Sum over critics of the batch-mean squared error to the (constant) targets."""
    x = critic_input(obs, actions)
    y = ad.const(np.asarray(targets, dtype=np.float32))
    total = None
    for k, c in enumerate(learner.critics):
        q = ad.reshape(c(x, None if leaves is None else leaves[k]), (x.shape[0],))
        term = ad.mean(ad.square(ad.add(q, ad.neg(y))))
        total = term if total is None else ad.add(total, term)
    return total


def actor_loss(learner: AgentLearner, obs: np.ndarray, actions: np.ndarray, noise: np.ndarray,
               leaves: list[ad.Var] | None = None, alpha: float | None = None) -> tuple[ad.Var, np.ndarray]:
    """Policy loss for ``learner`` with the other agents' ``actions`` held constant.

    Returns the loss and the learner's own log-probabilities of the fresh sample.
    """
    i = learner.index
    alpha = learner.alpha if alpha is None else alpha
    own, log_prob = squashed_gaussian_sample(learner.head(obs[:, i], leaves), noise)
    pieces = []
    for j in range(actions.shape[1]):
        pieces.append(own if j == i else ad.const(actions[:, j].astype(np.float32)))
    joint = ad.concat(pieces, axis=1)  # (B, n * a), agent-major like the flattened joint action
    q = min_q(learner.critics, ad.concat([ad.const(obs.reshape(obs.shape[0], -1).astype(np.float32)), joint], axis=1))
    loss = ad.mean(ad.add(ad.mul(log_prob, float(alpha)), ad.neg(q)))
    return loss, log_prob.value


def temperature_update(learner: AgentLearner, batch_logprobs: np.ndarray, target_entropy: float) -> np.ndarray:
    """One Adam step on ``log_alpha`` for ``mean(-alpha * (log_pi + target_entropy))``."""
    alpha = np.exp(learner.log_alpha)
    grad = -alpha * float(np.mean(np.asarray(batch_logprobs, dtype=np.float64) + target_entropy))
    adam_update(learner.alpha_opt, [learner.log_alpha], [grad])
    return learner.log_alpha


@dataclass
class AgentDiagnostics:
    actor_loss: float
    critic_loss: float
    alpha: float
    entropy: float


@dataclass
class UpdateDiagnostics:
    agents: list[AgentDiagnostics] = field(default_factory=list)


def update_step(learners: list[AgentLearner], batch: Batch, rng: np.random.Generator) -> UpdateDiagnostics:
    """Critic, actor, temperature and target updates for every agent in index order."""
    diag = UpdateDiagnostics()
    obs, act = batch.obs, batch.action
    rew = batch.reward.astype(np.float32)
    for ln in learners:
        hp = ln.hp
        i = ln.index
        next_actions, next_logps = sample_actions(learners, batch.next_obs, rng)
        y = td_target(ln, batch.next_obs, rew, next_actions, next_logps[:, i], ln.alpha, hp.gamma)
        c_leaves = [c.leaves() for c in ln.critics]
        c_loss = critic_loss(ln, obs, act, y, c_leaves)
        c_grads = ad.gradient(c_loss, [v for lv in c_leaves for v in lv])
        adam_update(ln.critic_opt, ln.critic_params, c_grads)

        cur_actions, _ = sample_actions(learners, obs, rng)
        noise = rng.standard_normal((len(batch), ln.action_dim))
        a_leaves = ln.actor.leaves()
        a_loss, logp = actor_loss(ln, obs, cur_actions, noise, a_leaves)
        a_grads = ad.gradient(a_loss, a_leaves)
        adam_update(ln.actor_opt, ln.actor.params, a_grads)

        temperature_update(ln, logp, hp.target_entropy)
        polyak_update(ln.target_params, ln.critic_params, hp.tau)
        diag.agents.append(AgentDiagnostics(float(a_loss.value), float(c_loss.value), ln.alpha,
                                            float(-np.mean(logp))))
    return diag


def make_learners(obs_dims: list[int], action_dim: int, hp: SacHyperparams, rng: np.random.Generator) -> list[AgentLearner]:
    return [AgentLearner(i, obs_dims, action_dim, hp, rng) for i in range(len(obs_dims))]
