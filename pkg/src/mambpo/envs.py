"""Cooperative navigation and cooperative predator-prey particle tasks."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import EPISODE_LENGTH, ContractViolation, Environment, validate_joint_action
from .physics import Entity, PhysicsParams, collision_forces, integrate_physics


@dataclass(frozen=True)
class NavigationScenario:
    n_agents: int = 3
    n_landmarks: int = 3
    agent_radius: float = 0.15
    agent_accel: float = 3.0
    agent_max_speed: float = 1.0
    landmark_radius: float = 0.05
    collision_penalty: float = 2.0

    @property
    def cover_threshold(self) -> float:
        return self.agent_radius + self.landmark_radius


@dataclass(frozen=True)
class PredatorPreyScenario:
    n_predators: int = 3
    predator_radius: float = 0.075
    predator_accel: float = 3.0
    predator_max_speed: float = 1.0
    prey_radius: float = 0.05
    prey_accel: float = 4.0
    prey_max_speed: float = 1.3
    detect_radius: float = 0.5
    catch_reward: float = 10.0

    def __post_init__(self):
        if self.predator_max_speed >= self.prey_max_speed:
            raise ValueError("predators must be slower than the prey")

    @property
    def catch_threshold(self) -> float:
        return self.predator_radius + self.prey_radius


@dataclass
class EnvState:
    agents: list[Entity]
    landmarks: list[Entity] = field(default_factory=list)
    prey: Entity | None = None
    step: int = 0

    def copy(self) -> "EnvState":
        return EnvState(
            agents=[replace(e) for e in self.agents],
            landmarks=[replace(e) for e in self.landmarks],
            prey=None if self.prey is None else replace(self.prey),
            step=self.step,
        )

    def positions(self) -> np.ndarray:
        ents = self.agents + self.landmarks + ([self.prey] if self.prey is not None else [])
        return np.array([e.position for e in ents])

    def velocities(self) -> np.ndarray:
        ents = self.agents + self.landmarks + ([self.prey] if self.prey is not None else [])
        return np.array([e.velocity for e in ents])


def spawn(scenario, seed) -> EnvState:
    """Fresh episode state; ``seed`` may be an int or a ``numpy.random.Generator``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if isinstance(scenario, NavigationScenario):
        pos = rng.uniform(-1.0, 1.0, size=(scenario.n_agents + scenario.n_landmarks, 2))
        agents = [
            Entity(p, radius=scenario.agent_radius, accel_gain=scenario.agent_accel, max_speed=scenario.agent_max_speed)
            for p in pos[: scenario.n_agents]
        ]
        landmarks = [
            Entity(p, radius=scenario.landmark_radius, movable=False, collidable=False)
            for p in pos[scenario.n_agents :]
        ]
        return EnvState(agents=agents, landmarks=landmarks)
    if isinstance(scenario, PredatorPreyScenario):
        pos = rng.uniform(-1.0, 1.0, size=(scenario.n_predators + 1, 2))
        agents = [
            Entity(p, radius=scenario.predator_radius, accel_gain=scenario.predator_accel,
                   max_speed=scenario.predator_max_speed)
            for p in pos[: scenario.n_predators]
        ]
        prey = Entity(pos[-1], radius=scenario.prey_radius, accel_gain=scenario.prey_accel,
                      max_speed=scenario.prey_max_speed)
        return EnvState(agents=agents, prey=prey)
    raise TypeError(f"unknown scenario {scenario!r}")


# --- cooperative navigation -------------------------------------------------

def observe_navigation(state: EnvState, agent_index: int) -> np.ndarray:
    if not 0 <= agent_index < len(state.agents):
        raise IndexError(f"agent index {agent_index} out of range")
    me = state.agents[agent_index]
    parts = [me.velocity, me.position]
    parts += [lm.position - me.position for lm in state.landmarks]
    parts += [a.position - me.position for j, a in enumerate(state.agents) if j != agent_index]
    return np.concatenate(parts)


def colliding_pairs(agents: list[Entity]) -> list[tuple[int, int]]:
    pairs = []
    for i in range(len(agents)):
        for j in range(i + 1, len(agents)):
            d = agents[i].position - agents[j].position
            if np.sqrt(d @ d) < agents[i].radius + agents[j].radius:
                pairs.append((i, j))
    return pairs


def landmark_distances(state: EnvState) -> np.ndarray:
    """Distance from each landmark to its closest agent."""
    agent_pos = np.array([a.position for a in state.agents])
    lm_pos = np.array([lm.position for lm in state.landmarks])
    d = np.linalg.norm(lm_pos[:, None, :] - agent_pos[None, :, :], axis=-1)
    return d.min(axis=1)


def all_landmarks_covered(state: EnvState, scenario: NavigationScenario = NavigationScenario()) -> bool:
    return bool(np.all(landmark_distances(state) < scenario.cover_threshold))


def reward_navigation(state: EnvState, scenario: NavigationScenario = NavigationScenario()) -> float:
    r = -float(landmark_distances(state).sum())
    r -= scenario.collision_penalty * len(colliding_pairs(state.agents))
    return r


# --- cooperative predator-prey ---------------------------------------------

def observe_predator(state: EnvState, predator_index: int) -> np.ndarray:
    if not 0 <= predator_index < len(state.agents):
        raise IndexError(f"predator index {predator_index} out of range")
    me = state.agents[predator_index]
    parts = [me.velocity, me.position]
    parts += [a.position - me.position for j, a in enumerate(state.agents) if j != predator_index]
    parts += [state.prey.position - me.position, state.prey.velocity - me.velocity]
    return np.concatenate(parts)


def prey_heuristic(state: EnvState, scenario: PredatorPreyScenario = PredatorPreyScenario()) -> np.ndarray:
    """Full acceleration directly away from the nearest predator once it is within the detect radius."""
    prey = state.prey.position
    dists = [float(np.linalg.norm(prey - a.position)) for a in state.agents]
    nearest = int(np.argmin(dists))  # argmin returns the lowest index on ties
    if dists[nearest] > scenario.detect_radius:
        return np.zeros(2)
    if dists[nearest] == 0.0:
        return np.array([1.0, 0.0])
    return (prey - state.agents[nearest].position) / dists[nearest]


def prey_caught(state: EnvState, scenario: PredatorPreyScenario = PredatorPreyScenario()) -> bool:
    for a in state.agents:
        if np.linalg.norm(a.position - state.prey.position) < a.radius + state.prey.radius:
            return True
    return False


def reward_predator_prey(state: EnvState, scenario: PredatorPreyScenario = PredatorPreyScenario()) -> float:
    return scenario.catch_reward if prey_caught(state, scenario) else 0.0


# --- environments -----------------------------------------------------------

class ParticleEnv(Environment):
    """Shared reset/step machinery; subclasses supply observation, reward and extra actors."""

    action_dim = 2
    episode_length = EPISODE_LENGTH

    def __init__(self, scenario, physics: PhysicsParams = PhysicsParams()):
        self.scenario = scenario
        self.physics = physics
        self.state: EnvState | None = None
        self._done = False

    def reset(self, seed) -> np.ndarray:
        self.state = spawn(self.scenario, seed)
        self._done = False
        return self.observe()

    def observe(self) -> np.ndarray:
        return np.stack([self._observe_agent(i) for i in range(self.n_agents)])

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self.state is None:
            raise ContractViolation("step() called before reset()")
        if self._done:
            raise ContractViolation("episode is over; call reset() before stepping again")
        action = validate_joint_action(action, self.n_agents, self.action_dim)
        entities = self._entities()
        forces = np.zeros((len(entities), 2))
        for i in range(self.n_agents):
            forces[i] = entities[i].accel_gain * action[i]
        scripted = self._scripted_forces()
        forces[self.n_agents : self.n_agents + len(scripted)] += scripted
        forces += collision_forces(entities, self.physics)
        self._set_entities(integrate_physics(entities, forces, self.physics))
        self.state.step += 1
        self._done = self.state.step >= self.episode_length
        return self.observe(), self.reward(), self._done

    def _scripted_actions(self) -> list[np.ndarray]:
        return []

    def _scripted_forces(self) -> np.ndarray:
        return np.zeros((0, 2))


class NavigationEnv(ParticleEnv):
    obs_dim = 14

    def __init__(self, scenario: NavigationScenario = NavigationScenario(), physics: PhysicsParams = PhysicsParams()):
        if scenario.n_agents != 3 or scenario.n_landmarks != 3:
            raise ValueError("cooperative navigation uses exactly 3 agents and 3 landmarks")
        super().__init__(scenario, physics)
        self.n_agents = scenario.n_agents

    def _observe_agent(self, i):
        return observe_navigation(self.state, i)

    def reward(self) -> float:
        return reward_navigation(self.state, self.scenario)

    def _entities(self):
        return self.state.agents + self.state.landmarks

    def _set_entities(self, ents):
        n = self.n_agents
        self.state.agents, self.state.landmarks = ents[:n], ents[n:]


class PredatorPreyEnv(ParticleEnv):
    obs_dim = 12

    def __init__(self, scenario: PredatorPreyScenario = PredatorPreyScenario(), physics: PhysicsParams = PhysicsParams()):
        super().__init__(scenario, physics)
        self.n_agents = scenario.n_predators

    def _observe_agent(self, i):
        return observe_predator(self.state, i)

    def reward(self) -> float:
        return reward_predator_prey(self.state, self.scenario)

    def _entities(self):
        return self.state.agents + [self.state.prey]

    def _set_entities(self, ents):
        self.state.agents, self.state.prey = ents[:-1], ents[-1]

    def _scripted_actions(self):
        return [prey_heuristic(self.state, self.scenario)]

    def _scripted_forces(self):
        return np.array([self.state.prey.accel_gain * a for a in self._scripted_actions()])


def make_env(name: str, scenario=None, physics: PhysicsParams = PhysicsParams()) -> ParticleEnv:
    if name == "navigation":
        return NavigationEnv(scenario or NavigationScenario(), physics)
    if name == "predator_prey":
        return PredatorPreyEnv(scenario or PredatorPreyScenario(), physics)
    raise ValueError(f"unknown environment {name!r}; expected 'navigation' or 'predator_prey'")
