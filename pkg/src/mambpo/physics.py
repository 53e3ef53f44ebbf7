"""Damped double-integrator point masses with softplus contact forces."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class PhysicsParams:
    dt: float = 0.1
    damping: float = 0.25
    contact_force: float = 100.0
    contact_margin: float = 0.001

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must lie in [0, 1)")


@dataclass
class Entity:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    radius: float = 0.05
    mass: float = 1.0
    max_speed: float | None = None
    accel_gain: float = 0.0
    movable: bool = True
    collidable: bool = True

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).copy()
        self.velocity = np.asarray(self.velocity, dtype=np.float64).copy()
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.mass <= 0:
            raise ValueError("mass must be positive")


def contact_force(pos_a, pos_b, r_a: float, r_b: float, params: PhysicsParams = PhysicsParams()) -> np.ndarray:
    """Soft penetration force acting on entity ``a``; ``b`` receives the negation."""
    delta = np.asarray(pos_a, dtype=np.float64) - np.asarray(pos_b, dtype=np.float64)
    dist = float(np.sqrt(delta @ delta))
    if dist == 0.0 and delta.any():
        dist = float(np.hypot(delta[0], delta[1]))  # the squared norm underflowed
    if dist == 0.0:
        direction = np.array([1.0, 0.0])
    else:
        direction = delta / dist
    k = params.contact_margin
    penetration = k * np.logaddexp(0.0, (r_a + r_b - dist) / k)
    return params.contact_force * penetration * direction


def integrate_physics(entities: list[Entity], applied_forces, params: PhysicsParams = PhysicsParams()) -> list[Entity]:
    """One explicit step: damp, accelerate, clamp speed, then move. Returns new entities."""
    forces = np.asarray(applied_forces, dtype=np.float64).reshape(len(entities), 2)
    if not np.all(np.isfinite(forces)):
        raise ValueError("applied forces must be finite")
    out = []
    for ent, f in zip(entities, forces):
        if not ent.movable:
            out.append(replace(ent))
            continue
        v = ent.velocity * (1.0 - params.damping) + (f / ent.mass) * params.dt
        if ent.max_speed is not None:
            speed = np.sqrt(v @ v)
            if speed > ent.max_speed:
                v = v / speed * ent.max_speed
        out.append(replace(ent, position=ent.position + v * params.dt, velocity=v))
    return out


def collision_forces(entities: list[Entity], params: PhysicsParams = PhysicsParams()) -> np.ndarray:
    """Pairwise contact forces summed per entity (only movable entities receive force)."""
    forces = np.zeros((len(entities), 2))
    for a in range(len(entities)):
        ea = entities[a]
        if not ea.collidable:
            continue
        for b in range(a + 1, len(entities)):
            eb = entities[b]
            if not eb.collidable or not (ea.movable or eb.movable):
                continue
            f = contact_force(ea.position, eb.position, ea.radius, eb.radius, params)
            if ea.movable:
                forces[a] += f
            if eb.movable:
                forces[b] -= f
    return forces
