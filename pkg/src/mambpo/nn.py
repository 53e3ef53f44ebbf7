"""Multilayer perceptrons, Adam, Polyak averaging and the squashed-Gaussian policy head."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
TANH_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class CheckpointError(ValueError):
    """A stored network or checkpoint could not be decoded; ``segment`` names the failing part."""

    def __init__(self, segment: str, reason: str):
        super().__init__(f"{segment}: {reason}")
        self.segment = segment


class DimensionError(ValueError):
    pass


def _init_layer(rng, fan_in, fan_out, lead=(), dtype=np.float32):
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=lead + (fan_in, fan_out)).astype(dtype)
    b = rng.uniform(-bound, bound, size=lead + ((1,) if lead else ()) + (fan_out,)).astype(dtype)
    return w, b


class Mlp:
    """ReLU hidden layers, identity output. ``params`` alternates weights ``(in, out)`` and biases."""

    def __init__(self, widths, rng: np.random.Generator | None = None, dtype=np.float32):
        self.widths = tuple(int(w) for w in widths)
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            self.params.extend(_init_layer(rng, fan_in, fan_out, dtype=dtype))

    @property
    def dtype(self):
        return self.params[0].dtype

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.widths[:-1], self.widths[1:]))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Graph-free forward pass."""
        x = np.asarray(x)
        if x.shape[-1] != self.widths[0]:
            raise DimensionError(f"input dimension {x.shape[-1]} does not match first layer width {self.widths[0]}")
        h = x.astype(self.dtype, copy=False)
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            h = h @ self.params[2 * k] + self.params[2 * k + 1]
            if k < n_layers - 1:
                np.maximum(h, 0, out=h)
        return h

    def leaves(self) -> list[ad.Var]:
        return [ad.param(p) for p in self.params]

    def __call__(self, x, leaves: list[ad.Var] | None = None) -> ad.Var:
        """Differentiable forward pass; pass ``leaves`` to get gradients w.r.t. the parameters."""
        x = x if isinstance(x, ad.Var) else ad.const(np.asarray(x, dtype=self.dtype))
        if x.shape[-1] != self.widths[0]:
            raise DimensionError(f"input dimension {x.shape[-1]} does not match first layer width {self.widths[0]}")
        ps = leaves if leaves is not None else [ad.const(p) for p in self.params]
        h = x
        n_layers = len(ps) // 2
        for k in range(n_layers):
            h = ad.affine(h, ps[2 * k], ps[2 * k + 1])
            if k < n_layers - 1:
                h = ad.relu(h)
        return h

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat)
        if flat.size != self.n_params:
            raise DimensionError(f"expected {self.n_params} parameters, got {flat.size}")
        offset = 0
        for p in self.params:
            p[...] = flat[offset : offset + p.size].reshape(p.shape)
            offset += p.size

    def copy(self) -> "Mlp":
        new = object.__new__(Mlp)
        new.widths = self.widths
        new.params = [p.copy() for p in self.params]
        return new


def mlp_forward(net: Mlp, x) -> np.ndarray:
    return net.forward(x)


class EnsembleMlp:
    """``n_members`` independent MLPs evaluated together with batched matrix products.

    Weights have shape ``(members, in, out)`` and biases ``(members, 1, out)``;
    inputs are ``(members, batch, in)`` or ``(batch, in)`` (shared by all members).
    """

    def __init__(self, widths, n_members: int, rng: np.random.Generator | None = None, dtype=np.float32):
        self.widths = tuple(int(w) for w in widths)
        self.n_members = int(n_members)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            self.params.extend(_init_layer(rng, fan_in, fan_out, lead=(self.n_members,), dtype=dtype))

    @property
    def dtype(self):
        return self.params[0].dtype

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=self.dtype)
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            h = h @ self.params[2 * k] + self.params[2 * k + 1]
            if k < n_layers - 1:
                np.maximum(h, 0, out=h)
        return h

    def leaves(self) -> list[ad.Var]:
        return [ad.param(p) for p in self.params]

    def __call__(self, x, leaves: list[ad.Var] | None = None) -> ad.Var:
        x = x if isinstance(x, ad.Var) else ad.const(np.asarray(x, dtype=self.dtype))
        ps = leaves if leaves is not None else [ad.const(p) for p in self.params]
        h = x
        n_layers = len(ps) // 2
        for k in range(n_layers):
            h = ad.affine(h, ps[2 * k], ps[2 * k + 1])
            if k < n_layers - 1:
                h = ad.relu(h)
        return h

    def member(self, j: int) -> Mlp:
        net = object.__new__(Mlp)
        net.widths = self.widths
        net.params = [p[j].copy() if k % 2 == 0 else p[j].reshape(-1).copy() for k, p in enumerate(self.params)]
        return net

    def set_member(self, j: int, net: Mlp) -> None:
        if net.widths != self.widths:
            raise DimensionError(f"member widths {net.widths} do not match ensemble widths {self.widths}")
        for dst, src in zip(self.params, net.params):
            dst[j] = src.reshape(dst.shape[1:])


# --- optimisation -----------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float
    l2: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None

    @classmethod
    def for_params(cls, params, lr: float, l2: float = 0.0) -> "OptimizerState":
        return cls(lr=lr, l2=l2, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_update(state: OptimizerState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """In-place bias-corrected Adam step; the L2 term is added to the gradient."""
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer moments must have matching lengths")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        if state.l2:
            g = g + state.l2 * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
        for a in (p, m, v):
            _flush_subnormal(a)
    return params


def _flush_subnormal(a: np.ndarray) -> None:
    # moments of long-idle weights decay into subnormals, which make every later op on them very slow
    a[np.abs(a) < np.finfo(a.dtype).tiny] = 0


def polyak_update(target_params: list[np.ndarray], online_params: list[np.ndarray], tau: float) -> list[np.ndarray]:
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    for t, o in zip(target_params, online_params):
        t *= 1.0 - tau
        t += tau * o
    return target_params


# --- squashed Gaussian policy head --------------------------------------------

@dataclass
class GaussianPolicyHead:
    mean: ad.Var
    log_std: ad.Var

    @classmethod
    def from_output(cls, out: ad.Var, action_dim: int = 2) -> "GaussianPolicyHead":
        return cls(out[..., :action_dim], ad.clip(out[..., action_dim:], LOG_STD_MIN, LOG_STD_MAX))


def squashed_gaussian_sample(head: GaussianPolicyHead, noise) -> tuple[ad.Var, ad.Var]:
    """Reparameterised ``tanh(mean + std * noise)`` and its log-density (summed over action dims)."""
    noise = np.asarray(noise, dtype=head.mean.value.dtype)
    if not np.all(np.isfinite(noise)):
        raise ValueError("noise must be finite")
    u = ad.add(head.mean, ad.mul(ad.exp(head.log_std), ad.const(noise)))
    action = ad.tanh(u)
    gauss = ad.add(ad.neg(head.log_std), ad.const((-0.5 * noise * noise - _HALF_LOG_2PI).astype(noise.dtype)))
    correction = ad.log(ad.add(ad.neg(ad.square(action)), 1.0 + TANH_EPS))
    log_prob = ad.sum(ad.add(gauss, ad.neg(correction)), axis=-1)
    return action, log_prob


def squashed_gaussian_log_prob(mean, log_std, action) -> np.ndarray:
    """Log-density of given actions in ``(-1, 1)^d`` under the squashed Gaussian (numpy)."""
    mean, log_std, action = (np.asarray(x, dtype=np.float64) for x in (mean, log_std, action))
    u = np.arctanh(action)
    z = (u - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI - np.log(1.0 - action**2 + TANH_EPS), axis=-1)


# --- network files ----------------------------------------------------------

def encode_network(widths, params: list[np.ndarray]) -> bytes:
    header = struct.pack("<i", len(widths)) + np.asarray(widths, dtype="<i4").tobytes()
    body = np.concatenate([np.asarray(p, dtype="<f4").ravel() for p in params]).tobytes()
    return header + body


def decode_network(data: bytes, segment: str = "network") -> Mlp:
    if len(data) < 4:
        raise CheckpointError(segment, "truncated shape header")
    (n,) = struct.unpack_from("<i", data, 0)
    if n < 2 or 4 + 4 * n > len(data):
        raise CheckpointError(segment, f"invalid layer count {n}")
    widths = np.frombuffer(data, dtype="<i4", count=n, offset=4).tolist()
    if any(w <= 0 for w in widths):
        raise CheckpointError(segment, f"invalid widths {widths}")
    expected = sum((a + 1) * b for a, b in zip(widths[:-1], widths[1:]))
    body = data[4 + 4 * n :]
    if len(body) != 4 * expected:
        raise CheckpointError(segment, f"expected {expected} float32 parameters, found {len(body) / 4:g}")
    net = object.__new__(Mlp)
    net.widths = tuple(widths)
    net.params = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        net.params += [np.empty((fan_in, fan_out), np.float32), np.empty(fan_out, np.float32)]
    net.set_flat(np.frombuffer(body, dtype="<f4").astype(np.float32))
    return net


def save_network(net: Mlp, path) -> None:
    Path(path).write_bytes(encode_network(net.widths, net.params))


def load_network(path) -> Mlp:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(path.name, str(exc)) from exc
    return decode_network(data, segment=path.name)
