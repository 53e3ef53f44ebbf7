"""Training loop: real interaction, periodic model fitting, model rollouts and G updates per step.

The model-free baseline runs through the same loop with the model block switched off.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from .autodiff import NonFiniteError
from .config import RunConfig, parse_config, write_config
from .core import Transition
from .envs import ParticleEnv, make_env
from .masac import AgentLearner, make_learners, select_actions, update_step
from .nn import CheckpointError, DimensionError, decode_network, encode_network
from .replay import ReplayBuffer, mixed_sample, sample_batch
from .world_model import EnsembleDynamicsModel, InputNormalizer, generate_rollouts, train_model

log = logging.getLogger(__name__)

RNG_STREAMS = ("env", "action", "sampler", "update", "model")


class TrainingDivergedError(RuntimeError):
    pass


def metrics_columns(n_agents: int) -> list[str]:
    cols = ["episode", "env_steps", "return"]
    cols += [f"alpha_{i}" for i in range(n_agents)]
    cols += [f"actor_loss_{i}" for i in range(n_agents)]
    cols += [f"critic_loss_{i}" for i in range(n_agents)]
    cols += ["model_nll"]
    cols += [f"entropy_{i}" for i in range(n_agents)]
    return cols


@dataclass
class Counters:
    model_train_events: int = 0
    rollout_calls: int = 0
    rollout_transitions: int = 0
    update_calls: int = 0


@dataclass
class TrainState:
    config: RunConfig
    learners: list[AgentLearner]
    env_buffer: ReplayBuffer
    rngs: dict[str, np.random.Generator]
    model: EnsembleDynamicsModel | None = None
    model_buffer: ReplayBuffer | None = None
    t: int = 0
    episode: int = 0
    last_model_nll: float = float("nan")
    counters: Counters = field(default_factory=Counters)


def make_rngs(seed: int) -> dict[str, np.random.Generator]:
    seqs = np.random.SeedSequence(seed).spawn(len(RNG_STREAMS) + 1)
    return {name: np.random.default_rng(s) for name, s in zip(("init",) + RNG_STREAMS, seqs)}


def env_from_config(config: RunConfig) -> ParticleEnv:
    return make_env(config.env, config.scenario, config.physics)


def new_train_state(config: RunConfig, env: ParticleEnv | None = None) -> TrainState:
    env = env or env_from_config(config)
    rngs = make_rngs(config.seed)
    init = rngs.pop("init")
    learners = make_learners(env.obs_dims, env.action_dim, config.masac, init)
    env_buffer = ReplayBuffer(config.replay.env_capacity, env.n_agents, env.obs_dim, env.action_dim, name="B_env")
    state = TrainState(config, learners, env_buffer, rngs)
    if config.model_based:
        m = config.model
        state.model = EnsembleDynamicsModel(env.n_agents, env.obs_dim, env.action_dim, m.hidden, m.ensemble_size,
                                            m.logvar_min, m.logvar_max, m.normalize, m.lr, m.l2,
                                            m.logvar_sharpness, init)
        state.model_buffer = ReplayBuffer(config.replay.model_capacity, env.n_agents, env.obs_dim, env.action_dim,
                                          name="B_model")
    return state


class _EpisodeStats:
    def __init__(self, n: int):
        self.sums = np.zeros((4, n))
        self.count = 0

    def add(self, diag):
        for i, a in enumerate(diag.agents):
            self.sums[:, i] += (a.actor_loss, a.critic_loss, a.alpha, a.entropy)
        self.count += 1

    def means(self):
        return self.sums / self.count if self.count else None


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    return format(float(x), ".9g")


def env_step_block(state: TrainState, env: ParticleEnv, obs: np.ndarray, step: int, stats: _EpisodeStats):
    """One real step plus everything the algorithm does after it; returns (next_obs, reward, done)."""
    cfg = state.config
    action = select_actions(state.learners, obs, "stochastic", state.rngs["action"])
    next_obs, reward, done = env.step(action)
    state.env_buffer.push(Transition(obs, action, reward, next_obs, step))
    state.t += 1
    t = state.t
    if cfg.model_based:
        due = t % cfg.model.interval == 0 or not state.model.trained
        if t >= cfg.train.warmup and due:
            report = train_model(state.model, state.env_buffer, cfg.model.train_config(), state.rngs["model"])
            if not report.skipped:
                state.counters.model_train_events += 1
                state.last_model_nll = report.mean_final_nll
                log.info("t=%d model trained, held-out NLL %.4f", t, state.last_model_nll)
    if t > cfg.train.warmup:
        if cfg.model_based and state.model.trained:
            added = generate_rollouts(state.model, state.env_buffer, state.model_buffer, state.learners,
                                      cfg.model.rollouts, cfg.model.rollout_length, state.rngs["model"])
            state.counters.rollout_calls += 1
            state.counters.rollout_transitions += added
        for _ in range(cfg.gradient_steps):
            # until the model has produced data, updates draw from real transitions only
            if cfg.model_based and len(state.model_buffer) > 0:
                batch = mixed_sample(state.env_buffer, state.model_buffer, cfg.masac.batch,
                                     cfg.replay.real_fraction, state.rngs["sampler"])
            else:
                batch = sample_batch(state.env_buffer, cfg.masac.batch, state.rngs["sampler"])
            stats.add(update_step(state.learners, batch, state.rngs["update"]))
            state.counters.update_calls += 1
    return next_obs, reward, done


@dataclass
class TrainResult:
    run_dir: Path
    state: TrainState
    returns: list[float]


def run_training(config: RunConfig, run_dir, resume: bool = False, on_episode_end=None) -> TrainResult:
    """Train until ``config.episodes`` episodes are logged in ``run_dir``.

    With ``resume=True`` the newest checkpoint under ``run_dir/checkpoints`` is
    restored and the metrics files are cut back to that episode first.
    """
    run_dir = Path(run_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    env = env_from_config(config)
    metrics_path, timing_path = run_dir / "metrics.csv", run_dir / "timing.csv"
    cols = metrics_columns(env.n_agents)

    latest = latest_checkpoint(run_dir) if resume else None
    if latest is not None:
        state = load_checkpoint(latest, config)
        _truncate_csv(metrics_path, state.episode)
        _truncate_csv(timing_path, state.episode)
    else:
        state = new_train_state(config, env)
        write_config(config, run_dir / "config.toml")
        with open(metrics_path, "w", newline="") as fh:
            csv.writer(fh).writerow(cols)
        with open(timing_path, "w", newline="") as fh:
            csv.writer(fh).writerow(["episode", "wall_time"])

    returns = _read_returns(metrics_path)
    t0 = time.perf_counter()
    while state.episode < config.episodes:
        obs = env.reset(int(state.rngs["env"].integers(2**31 - 1)))
        stats = _EpisodeStats(env.n_agents)
        ep_return = 0.0
        try:
            for step in range(env.episode_length):
                obs, reward, done = env_step_block(state, env, obs, step, stats)
                ep_return += reward
        except NonFiniteError as exc:
            failed = ckpt_dir / f"failed_ep{state.episode + 1:06d}"
            save_checkpoint(state, failed)
            raise TrainingDivergedError(f"non-finite value during training ({exc}); state saved to {failed}") from exc
        assert done, "episodes end by the time limit only"
        state.episode += 1
        returns.append(ep_return)
        means = stats.means()
        alphas = [ln.alpha for ln in state.learners]
        row = [state.episode, state.t, _fmt(ep_return)] + [_fmt(a) for a in alphas]
        for k in (0, 1):
            row += [_fmt(v) for v in (means[k] if means is not None else [None] * env.n_agents)]
        row += [_fmt(state.last_model_nll)]
        row += [_fmt(v) for v in (means[3] if means is not None else [None] * env.n_agents)]
        with open(metrics_path, "a", newline="") as fh:
            csv.writer(fh).writerow(row)
        with open(timing_path, "a", newline="") as fh:
            csv.writer(fh).writerow([state.episode, f"{time.perf_counter() - t0:.3f}"])
        if state.episode % config.train.checkpoint_every == 0 or state.episode == config.episodes:
            save_checkpoint(state, ckpt_dir / f"ep{state.episode:06d}")
        if on_episode_end is not None:
            on_episode_end(state)
    return TrainResult(run_dir, state, returns)


def _read_returns(path: Path) -> list[float]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return [float(r["return"]) for r in csv.DictReader(fh)]


def _truncate_csv(path: Path, last_episode: int) -> None:
    if not path.exists():
        return
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= last_episode]
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(keep)


def latest_checkpoint(run_dir) -> Path | None:
    found = sorted(p for p in (Path(run_dir) / "checkpoints").glob("ep*") if p.is_dir())
    return found[-1] if found else None


# --- checkpoints ------------------------------------------------------------

def _opt_segments(prefix: str, opt) -> list[tuple[str, bytes]]:
    segs = [(f"{prefix}.meta", ck.encode_json({"step": opt.step, "lr": opt.lr, "l2": opt.l2}))]
    segs += [(f"{prefix}.m{k}", ck.encode_array(a)) for k, a in enumerate(opt.m)]
    segs += [(f"{prefix}.v{k}", ck.encode_array(a)) for k, a in enumerate(opt.v)]
    return segs


def _load_opt(prefix: str, opt, segs: dict[str, bytes]) -> None:
    meta = ck.decode_json(_seg(segs, f"{prefix}.meta"), f"{prefix}.meta")
    opt.step, opt.lr, opt.l2 = meta["step"], meta["lr"], meta["l2"]
    for k in range(len(opt.m)):
        for name, store in (("m", opt.m), ("v", opt.v)):
            key = f"{prefix}.{name}{k}"
            arr = ck.decode_array(_seg(segs, key), key)
            if arr.shape != store[k].shape:
                raise DimensionError(f"{key}: stored shape {arr.shape} != expected {store[k].shape}")
            store[k][...] = arr


def _seg(segs: dict[str, bytes], name: str) -> bytes:
    if name not in segs:
        raise CheckpointError(name, "segment missing")
    return segs[name]


def _buffer_segments(prefix: str, buf: ReplayBuffer) -> list[tuple[str, bytes]]:
    data = buf.contents()
    return [(f"{prefix}.meta", ck.encode_json({"capacity": buf.capacity, "size": buf.size}))] + [
        (f"{prefix}.{f}", ck.encode_array(getattr(data, f))) for f in ("obs", "action", "reward", "next_obs", "step_index")
    ]


def _load_buffer(prefix: str, buf: ReplayBuffer, segs: dict[str, bytes]) -> None:
    meta = ck.decode_json(_seg(segs, f"{prefix}.meta"), f"{prefix}.meta")
    arrays = {f: ck.decode_array(_seg(segs, f"{prefix}.{f}"), f"{prefix}.{f}")
              for f in ("obs", "action", "reward", "next_obs", "step_index")}
    if arrays["obs"].shape[1:] != buf.obs.shape[1:]:
        raise DimensionError(f"{prefix}: stored observation shape {arrays['obs'].shape[1:]} != {buf.obs.shape[1:]}")
    n = meta["size"]
    for f, arr in arrays.items():
        getattr(buf, f)[:n] = arr
    buf.size = n
    buf.cursor = n % buf.capacity


def save_checkpoint(state: TrainState, path) -> Path:
    """Write a self-describing checkpoint directory (config, one file per network, ``state.bin``)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_config(state.config, path / "config.toml")
    for ln in state.learners:
        i = ln.index
        (path / f"actor_{i}.bin").write_bytes(encode_network(ln.actor.widths, ln.actor.params))
        for k, (c, tc) in enumerate(zip(ln.critics, ln.target_critics)):
            (path / f"critic{k + 1}_{i}.bin").write_bytes(encode_network(c.widths, c.params))
            (path / f"target_critic{k + 1}_{i}.bin").write_bytes(encode_network(tc.widths, tc.params))
    segs = [("counters", ck.encode_json({
        "t": state.t, "episode": state.episode, "last_model_nll": repr(state.last_model_nll),
        **state.counters.__dict__,
    }))]
    segs += [(f"rng.{k}", ck.encode_json(g.bit_generator.state)) for k, g in sorted(state.rngs.items())]
    for ln in state.learners:
        segs.append((f"log_alpha_{ln.index}", ck.encode_array(ln.log_alpha)))
        segs += _opt_segments(f"actor_opt_{ln.index}", ln.actor_opt)
        segs += _opt_segments(f"critic_opt_{ln.index}", ln.critic_opt)
        segs += _opt_segments(f"alpha_opt_{ln.index}", ln.alpha_opt)
    segs += _buffer_segments("B_env", state.env_buffer)
    if state.model is not None:
        save_model(state.model, path)
        segs.append(("model.trained", ck.encode_json(state.model.trained)))
        segs += _opt_segments("model_opt", state.model.opt)
        segs += _buffer_segments("B_model", state.model_buffer)
    ck.write_container(path / "state.bin", segs)
    return path


def save_model(model: EnsembleDynamicsModel, path) -> None:
    path = Path(path)
    for j in range(model.n_members):
        net = model.net.member(j)
        (path / f"model_member_{j:02d}.bin").write_bytes(encode_network(net.widths, net.params))
    (path / "model_normalizer.bin").write_bytes(model.normalizer.encode())


def load_model_members(model: EnsembleDynamicsModel, path) -> None:
    path = Path(path)
    for j in range(model.n_members):
        name = f"model_member_{j:02d}.bin"
        net = _read_net(path / name, name)
        if net.widths != model.net.widths:
            raise DimensionError(f"{name}: stored widths {net.widths} != expected {model.net.widths}")
        model.net.set_member(j, net)
    model.normalizer = InputNormalizer.decode(_read_bytes(path / "model_normalizer.bin"), "model_normalizer.bin")


def _read_bytes(p: Path) -> bytes:
    try:
        return p.read_bytes()
    except OSError as exc:
        raise CheckpointError(p.name, str(exc)) from exc


def _read_net(p: Path, name: str):
    return decode_network(_read_bytes(p), name)


def _load_into(dst, p: Path) -> None:
    net = _read_net(p, p.name)
    if net.widths != dst.widths:
        raise DimensionError(f"{p.name}: stored widths {net.widths} != expected {dst.widths}")
    for a, b in zip(dst.params, net.params):
        a[...] = b


def load_checkpoint(path, config: RunConfig | None = None) -> TrainState:
    """Rebuild a :class:`TrainState`; ``config`` defaults to the checkpoint's own ``config.toml``.

    Raises :class:`DimensionError` when stored networks do not fit the configured
    environment and :class:`CheckpointError` naming the segment that failed to decode.
    """
    path = Path(path)
    if not path.is_dir():
        raise CheckpointError(str(path), "checkpoint directory not found")
    if config is None:
        config = parse_config(path / "config.toml")
    state = new_train_state(config)
    for ln in state.learners:
        i = ln.index
        _load_into(ln.actor, path / f"actor_{i}.bin")
        for k, (c, tc) in enumerate(zip(ln.critics, ln.target_critics)):
            _load_into(c, path / f"critic{k + 1}_{i}.bin")
            _load_into(tc, path / f"target_critic{k + 1}_{i}.bin")
    segs = ck.read_container(path / "state.bin")
    counters = ck.decode_json(_seg(segs, "counters"), "counters")
    state.t, state.episode = counters.pop("t"), counters.pop("episode")
    state.last_model_nll = float(counters.pop("last_model_nll"))
    state.counters = Counters(**counters)
    for k, g in state.rngs.items():
        g.bit_generator.state = ck.decode_json(_seg(segs, f"rng.{k}"), f"rng.{k}")
    for ln in state.learners:
        ln.log_alpha[...] = ck.decode_array(_seg(segs, f"log_alpha_{ln.index}"), f"log_alpha_{ln.index}")
        _load_opt(f"actor_opt_{ln.index}", ln.actor_opt, segs)
        _load_opt(f"critic_opt_{ln.index}", ln.critic_opt, segs)
        _load_opt(f"alpha_opt_{ln.index}", ln.alpha_opt, segs)
    _load_buffer("B_env", state.env_buffer, segs)
    if state.model is not None:
        load_model_members(state.model, path)
        state.model.trained = bool(ck.decode_json(_seg(segs, "model.trained"), "model.trained"))
        _load_opt("model_opt", state.model.opt, segs)
        _load_buffer("B_model", state.model_buffer, segs)
    return state
