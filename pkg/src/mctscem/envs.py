"""Pendulum swing-up and sparse-reward continuous Mountain Car.

Each environment exposes pure ``step``/``reward`` functions plus a thin
stateful wrapper that only tracks the current state and step counter. Reward
functions are vectorised over a leading batch axis so planners can use them
as the oracle reward on model-predicted states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import Bounds, clip_action


class InvalidStateError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_bounds: Bounds
    max_episode_steps: int

    def __post_init__(self):
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")
        if self.action_bounds.dim != self.action_dim:
            raise ValueError("action bounds do not match action_dim")


class StepResult(NamedTuple):
    next_state: np.ndarray
    reward: float
    done: bool


def _check_state(state: np.ndarray, dim: int) -> np.ndarray:
    s = np.asarray(state, dtype=float).reshape(-1)
    if s.shape[0] != dim or not np.all(np.isfinite(s)):
        raise InvalidStateError(f"invalid state {state!r}")
    return s


def angle_normalize(theta):
    """Wrap angles onto [-pi, pi)."""
    return np.mod(np.asarray(theta, dtype=float) + np.pi, 2 * np.pi) - np.pi


# --------------------------------------------------------------------------
# Pendulum

PENDULUM_MAX_SPEED = 8.0
PENDULUM_MAX_TORQUE = 2.0
PENDULUM_DT = 0.05
PENDULUM_G = 10.0
PENDULUM_M = 1.0
PENDULUM_L = 1.0


def pendulum_cost_terms(theta, theta_dot, torque):
    th = angle_normalize(theta)
    return th ** 2 + 0.1 * np.asarray(theta_dot) ** 2 + 0.001 * np.asarray(torque) ** 2


def pendulum_reward(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Reward for ``[cos, sin, theta_dot]`` states; batched over the first axis."""
    states = np.atleast_2d(states)
    actions = np.atleast_2d(actions)
    theta = np.arctan2(states[:, 1], states[:, 0])
    torque = np.clip(actions[:, 0], -PENDULUM_MAX_TORQUE, PENDULUM_MAX_TORQUE)
    return -(theta ** 2 + 0.1 * states[:, 2] ** 2 + 0.001 * torque ** 2)


def pendulum_step(state: np.ndarray, action: np.ndarray) -> StepResult:
    s = _check_state(state, 3)
    u = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -PENDULUM_MAX_TORQUE, PENDULUM_MAX_TORQUE))
    theta = math.atan2(s[1], s[0])
    theta_dot = float(np.clip(s[2], -PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED))
    reward = -(theta ** 2 + 0.1 * theta_dot ** 2 + 0.001 * u ** 2)
    # theta = 0 is upright, so gravity pushes away from it.
    accel = 3 * PENDULUM_G / (2 * PENDULUM_L) * math.sin(theta) + 3.0 / (PENDULUM_M * PENDULUM_L ** 2) * u
    new_theta_dot = float(np.clip(theta_dot + accel * PENDULUM_DT, -PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED))
    new_theta = theta + new_theta_dot * PENDULUM_DT
    next_state = np.array([math.cos(new_theta), math.sin(new_theta), new_theta_dot])
    return StepResult(next_state, reward, False)


# --------------------------------------------------------------------------
# Sparse Mountain Car

MC_MIN_X, MC_MAX_X = -1.2, 0.6
MC_MAX_SPEED = 0.07
MC_GOAL_X = 0.45
MC_POWER = 0.0015
MC_GRAVITY = 0.0025


def mountaincar_reward(states: np.ndarray, actions: np.ndarray, goal_x: float = MC_GOAL_X,
                       step_penalty: float = -0.01) -> np.ndarray:
    states = np.atleast_2d(states)
    return np.where(states[:, 0] >= goal_x, 1.0, step_penalty)


def mountaincar_step(state: np.ndarray, action: np.ndarray, goal_x: float = MC_GOAL_X,
                     step_penalty: float = -0.01) -> StepResult:
    """One step; a state already at the goal yields +1 and terminates."""
    s = _check_state(state, 2)
    x, v = float(s[0]), float(s[1])
    if x >= goal_x:
        return StepResult(s.copy(), 1.0, True)
    force = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -1.0, 1.0))
    v = v + force * MC_POWER - MC_GRAVITY * math.cos(3 * x)
    v = min(max(v, -MC_MAX_SPEED), MC_MAX_SPEED)
    x = min(max(x + v, MC_MIN_X), MC_MAX_X)
    if x == MC_MIN_X and v < 0:
        v = 0.0
    return StepResult(np.array([x, v]), float(step_penalty), False)


# --------------------------------------------------------------------------
# Stateful wrappers


class Env:
    """Tracks current state and step count around a pure step function."""

    spec: EnvSpec

    def __init__(self):
        self.state: np.ndarray | None = None
        self.steps = 0

    def reward(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_initial(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _step(self, state: np.ndarray, action: np.ndarray) -> StepResult:
        raise NotImplementedError

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = self.sample_initial(rng)
        self.steps = 0
        return self.state.copy()

    def step(self, action: np.ndarray) -> StepResult:
        if self.state is None:
            raise RuntimeError("reset() must be called before step()")
        action = clip_action(np.asarray(action, dtype=float).reshape(-1), self.spec.action_bounds)
        res = self._step(self.state, action)
        self.steps += 1
        self.state = res.next_state
        done = res.done or self.steps >= self.spec.max_episode_steps
        return StepResult(res.next_state.copy(), res.reward, done)


class Pendulum(Env):
    def __init__(self, max_episode_steps: int = 200):
        super().__init__()
        self.spec = EnvSpec("pendulum", 3, 1, Bounds.box(-PENDULUM_MAX_TORQUE, PENDULUM_MAX_TORQUE), max_episode_steps)

    def reward(self, states, actions):
        return pendulum_reward(states, actions)

    def sample_initial(self, rng):
        theta = rng.uniform(-np.pi, np.pi)
        theta_dot = rng.uniform(-1.0, 1.0)
        return np.array([math.cos(theta), math.sin(theta), theta_dot])

    def _step(self, state, action):
        return pendulum_step(state, action)


class SparseMountainCar(Env):
    def __init__(self, max_episode_steps: int = 200, step_penalty: float = -0.01, goal_x: float = MC_GOAL_X):
        super().__init__()
        self.spec = EnvSpec("sparse-mountain-car", 2, 1, Bounds.box(-1.0, 1.0), max_episode_steps)
        self.step_penalty = step_penalty
        self.goal_x = goal_x

    def reward(self, states, actions):
        return mountaincar_reward(states, actions, self.goal_x, self.step_penalty)

    def sample_initial(self, rng):
        return np.array([rng.uniform(-0.6, -0.4), 0.0])

    def _step(self, state, action):
        return mountaincar_step(state, action, self.goal_x, self.step_penalty)


ENVIRONMENTS = {"pendulum": Pendulum, "sparse-mountain-car": SparseMountainCar}


def make_env(name: str, max_episode_steps: int | None = None, step_penalty: float | None = None) -> Env:
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    kwargs = {}
    if max_episode_steps:
        kwargs["max_episode_steps"] = int(max_episode_steps)
    if step_penalty is not None and cls is SparseMountainCar:
        kwargs["step_penalty"] = float(step_penalty)
    return cls(**kwargs)
