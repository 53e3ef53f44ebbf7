import numpy as np
import pytest

from mambpo.config import parse_config


def central_difference(f, arr: np.ndarray, index, h: float = 1e-4) -> float:
    """d f / d arr[index] by central differences, restoring ``arr`` afterwards."""
    old = arr[index]
    arr[index] = old + h
    up = f()
    arr[index] = old - h
    down = f()
    arr[index] = old
    return (up - down) / (2 * h)


def max_relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def sample_indices(arr: np.ndarray, k: int, rng) -> list[tuple]:
    flat = rng.choice(arr.size, size=min(k, arr.size), replace=False)
    return [np.unravel_index(i, arr.shape) for i in flat]


TINY = {
    "train.warmup": 50, "model.batch": 32, "model.gradient_steps": 5, "model.hidden": [16, 16],
    "model.ensemble_size": 3, "model.interval": 50, "masac.batch": 32, "gradient_steps": 1,
    "masac.actor_hidden": [16, 16], "masac.critic_hidden": [16, 16], "train.checkpoint_every": 2,
}


def tiny_config(**extra):
    return parse_config(**{**TINY, **extra})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def linear_toy_buffer(n: int, seed: int, n_agents: int = 2, obs_dim: int = 3, scale: float = 1.0):
    """Deterministic linear dynamics obs' = A obs + B act with reward c . obs, i.i.d. inputs.

    ``scale`` multiplies observations and the action effect; 0.1 gives per-step
    changes of the size seen in the particle tasks.
    """
    from mambpo.core import Transition
    from mambpo.replay import ReplayBuffer

    sys_rng = np.random.default_rng(99)  # the system itself is fixed; ``seed`` only draws data
    d, a = n_agents * obs_dim, n_agents * 2
    A = 0.9 * np.linalg.qr(sys_rng.normal(size=(d, d)))[0]
    B = 0.5 * sys_rng.normal(size=(d, a))
    c = sys_rng.normal(size=d)
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(n, n_agents, obs_dim, name="toy")
    for k in range(n):
        o = scale * rng.normal(size=d)
        u = rng.uniform(-1, 1, size=a)
        buf.push(Transition(o.reshape(n_agents, obs_dim), u.reshape(n_agents, 2), float(c @ o),
                            (A @ o + scale * B @ u).reshape(n_agents, obs_dim), k % 25))
    return buf


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion: outcome plus the measured values."""
    lines = []
    for outcome in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid or (rep.when != "call" and outcome != "skipped"):
                continue
            name = nodeid.split("::")[-1][len("test_criterion_"):]
            number, _, label = name.partition("_")
            detail = dict(rep.user_properties).get("detail", "")
            if outcome == "skipped" and isinstance(rep.longrepr, tuple):
                detail = rep.longrepr[2]
            lines.append((int(number), f"criterion {number} ({label.replace('_', ' ')}): "
                                       f"{ {'passed': 'PASS', 'failed': 'FAIL', 'skipped': 'SKIP'}[outcome]} - {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
