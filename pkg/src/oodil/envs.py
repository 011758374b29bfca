"""Desk-scale environments sharing a state space across dynamics variants,
plus the rule-based demonstrators used to build demonstration corpora.

All environments expose the same batched interface so the RL code can step
many copies at once:

    reset(rng, n)                 -> states (n, d)
    step(states, actions, t)      -> next_states, rewards, causes

``causes`` holds one of RUNNING / GOAL / COLLISION / TIMEOUT per row, where
``t`` is the number of steps already taken in each episode.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .demos import Trajectory

RUNNING, GOAL, COLLISION, TIMEOUT = 0, 1, 2, 3
CAUSE_NAMES = {RUNNING: "running", GOAL: "goal", COLLISION: "collision", TIMEOUT: "timeout"}

OBSTACLE_CENTERS = (0.25, 0.75)
OBSTACLE_Y = (0.45, 0.55)
GOAL_REWARD = 1000.0
COLLISION_REWARD = -1000.0
STEP_REWARD = -1.0
# y is accumulated in floating point; 50 * 0.02 may land a hair below 1
GOAL_EPS = 1e-9


@dataclass
class StepResult:
    next_state: np.ndarray
    reward: float
    cause: int
    action_clamped: bool = False

    @property
    def terminal(self) -> bool:
        return self.cause != RUNNING

    @property
    def cause_name(self) -> str:
        return CAUSE_NAMES[self.cause]


def _clamp_actions(actions):
    a = np.asarray(actions, dtype=np.float64)
    clipped = np.clip(a, -1.0, 1.0)
    return clipped, np.asarray(clipped != a)


# --------------------------------------------------------------------------
# Driving
# --------------------------------------------------------------------------


@dataclass
class DrivingConfig:
    obstacle_widths: tuple[float, float] = (0.4, 0.25)
    speed: float = 1.0
    step_size: float = 0.02
    max_steps: int = 200

    def __post_init__(self):
        self.obstacle_widths = tuple(float(w) for w in self.obstacle_widths)
        if len(self.obstacle_widths) != 2 or not all(0.0 < w < 1.0 for w in self.obstacle_widths):
            raise ValueError(f"obstacle widths must be two values in (0, 1): {self.obstacle_widths}")
        if self.speed <= 0 or self.step_size <= 0 or self.max_steps < 1:
            raise ValueError("speed, step_size and max_steps must be positive")

    @property
    def kind(self) -> str:
        return "driving"

    def obstacles(self) -> list[tuple[float, float]]:
        """x-intervals of the two obstacles (both span OBSTACLE_Y in y)."""
        return [(c - w / 2.0, c + w / 2.0) for c, w in zip(OBSTACLE_CENTERS, self.obstacle_widths)]

    def gaps(self) -> dict[str, tuple[float, float]]:
        """Open x-intervals between/around obstacles; closed gaps are omitted."""
        (l0, r0), (l1, r1) = self.obstacles()
        spans = {"left": (0.0, l0), "middle": (r0, l1), "right": (r1, 1.0)}
        return {k: v for k, v in spans.items() if v[1] - v[0] > 1e-9}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = "driving"
        d["obstacle_widths"] = list(self.obstacle_widths)
        return d


def in_obstacle(config: DrivingConfig, x, y):
    x = np.asarray(x)
    y = np.asarray(y)
    band = (y >= OBSTACLE_Y[0]) & (y <= OBSTACLE_Y[1])
    hit = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    for lo, hi in config.obstacles():
        hit |= band & (x >= lo) & (x <= hi)
    return hit


def driving_reset(config: DrivingConfig, rng: np.random.Generator) -> np.ndarray:
    return np.array([rng.uniform(0.0, 1.0), 0.0])


def driving_step_batch(config: DrivingConfig, states, actions, t):
    a, clamped = _clamp_actions(actions)
    move = config.step_size * config.speed
    x = np.clip(states[:, 0] + a * move, 0.0, 1.0)
    y = states[:, 1] + move
    nxt = np.stack([x, y], axis=1)
    reward = np.full(len(x), STEP_REWARD)
    cause = np.full(len(x), RUNNING)
    goal = y >= 1.0 - GOAL_EPS
    hit = in_obstacle(config, x, y) & ~goal
    reward[goal] += GOAL_REWARD
    reward[hit] += COLLISION_REWARD
    cause[goal] = GOAL
    cause[hit] = COLLISION
    cause[(cause == RUNNING) & (np.asarray(t) + 1 >= config.max_steps)] = TIMEOUT
    return nxt, reward, cause, clamped


def driving_step(config: DrivingConfig, state, action: float, t: int = 0) -> StepResult:
    nxt, r, cause, clamped = driving_step_batch(config, np.asarray(state, float)[None],
                                                np.array([action]), np.array([t]))
    return StepResult(nxt[0], float(r[0]), int(cause[0]), bool(clamped[0]))


# --------------------------------------------------------------------------
# Point mass
# --------------------------------------------------------------------------


@dataclass
class PointMassConfig:
    force_gain: float = 1.0
    drag: float = 0.1
    step_size: float = 0.1
    target: float = 0.0
    max_steps: int = 100
    start_range: float = 1.0

    def __post_init__(self):
        if self.force_gain <= 0 or self.drag < 0:
            raise ValueError("force_gain must be > 0 and drag >= 0")

    @property
    def kind(self) -> str:
        return "pointmass"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = "pointmass"
        return d


def pointmass_step_batch(config: PointMassConfig, states, actions, t):
    a, clamped = _clamp_actions(actions)
    x, v = states[:, 0], states[:, 1]
    v_new = v + config.step_size * (config.force_gain * a - config.drag * v)
    x_new = x + config.step_size * v_new
    reward = -np.abs(x_new - config.target)
    cause = np.where(np.asarray(t) + 1 >= config.max_steps, TIMEOUT, RUNNING)
    return np.stack([x_new, v_new], axis=1), reward, cause, clamped


def pointmass_step(config: PointMassConfig, state, action: float, t: int = 0) -> StepResult:
    nxt, r, cause, clamped = pointmass_step_batch(config, np.asarray(state, float)[None],
                                                  np.array([action]), np.array([t]))
    return StepResult(nxt[0], float(r[0]), int(cause[0]), bool(clamped[0]))


# --------------------------------------------------------------------------
# Batched environment wrappers
# --------------------------------------------------------------------------


class Env:
    state_dim = 2
    config = None

    def __init__(self):
        self.clamped_actions = 0

    @property
    def max_steps(self) -> int:
        return self.config.max_steps

    def reset(self, rng, n=None):
        raise NotImplementedError

    def _step(self, states, actions, t):
        raise NotImplementedError

    def step(self, states, actions, t):
        nxt, r, cause, clamped = self._step(np.asarray(states, float), actions, t)
        self.clamped_actions += int(np.sum(clamped))
        return nxt, r, cause


class DrivingEnv(Env):
    def __init__(self, config: DrivingConfig | None = None):
        super().__init__()
        self.config = config or DrivingConfig()

    def reset(self, rng, n=None):
        m = 1 if n is None else n
        s = np.zeros((m, 2))
        s[:, 0] = rng.uniform(0.0, 1.0, size=m)
        return s[0] if n is None else s

    def _step(self, states, actions, t):
        return driving_step_batch(self.config, states, actions, t)


class PointMassEnv(Env):
    def __init__(self, config: PointMassConfig | None = None):
        super().__init__()
        self.config = config or PointMassConfig()

    def reset(self, rng, n=None):
        m = 1 if n is None else n
        s = np.zeros((m, 2))
        s[:, 0] = rng.uniform(-self.config.start_range, self.config.start_range, size=m)
        return s[0] if n is None else s

    def _step(self, states, actions, t):
        return pointmass_step_batch(self.config, states, actions, t)


@dataclass
class BanditConfig:
    optimum: float = 0.5
    max_steps: int = 1


class BanditEnv(Env):
    """One-step episode, reward -(a - optimum)^2. A smoke test for the learner."""

    state_dim = 1

    def __init__(self, config: BanditConfig | None = None):
        super().__init__()
        self.config = config or BanditConfig()

    def reset(self, rng, n=None):
        return np.zeros(1) if n is None else np.zeros((n, 1))

    def _step(self, states, actions, t):
        a, clamped = _clamp_actions(actions)
        r = -(a - self.config.optimum) ** 2
        return states.copy(), r, np.full(len(a), TIMEOUT), clamped


def make_env(spec) -> Env:
    """Build an environment from a config object or its dict form."""
    if isinstance(spec, Env):
        return spec
    if isinstance(spec, DrivingConfig):
        return DrivingEnv(spec)
    if isinstance(spec, PointMassConfig):
        return PointMassEnv(spec)
    d = dict(spec)
    kind = d.pop("kind", "driving")
    d.pop("name", None)
    if kind == "driving":
        return DrivingEnv(DrivingConfig(**d))
    if kind == "pointmass":
        return PointMassEnv(PointMassConfig(**d))
    raise ValueError(f"unknown environment kind {kind!r}")


# --------------------------------------------------------------------------
# Rollouts
# --------------------------------------------------------------------------


@dataclass
class Episode:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    cause: int
    gamma: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def length(self) -> int:
        return len(self.rewards)

    @property
    def undiscounted_return(self) -> float:
        return float(np.sum(self.rewards))

    @property
    def discounted_return(self) -> float:
        return float(np.sum(self.rewards * self.gamma ** np.arange(len(self.rewards))))


def rollout(env: Env, policy: Callable, rng: np.random.Generator, max_steps: int | None = None,
            start=None, gamma: float = 0.99) -> Episode:
    """Run one episode. ``policy(state, rng) -> action``."""
    limit = env.max_steps if max_steps is None else max_steps
    s = env.reset(rng) if start is None else np.asarray(start, dtype=np.float64)
    states, actions, rewards = [s], [], []
    cause = RUNNING
    for t in range(limit):
        a = float(policy(s, rng))
        nxt, r, c = env.step(s[None], np.array([a]), np.array([t]))
        s, cause = nxt[0], int(c[0])
        if cause == RUNNING and t + 1 >= limit:
            cause = TIMEOUT
        states.append(s)
        actions.append(a)
        rewards.append(float(r[0]))
        if cause != RUNNING:
            break
    return Episode(np.array(states), np.array(actions), np.array(rewards), cause, gamma)


# --------------------------------------------------------------------------
# Rule-based demonstrators
# --------------------------------------------------------------------------

APPROACH_GAIN = 10.0
EXIT_GAIN = 3.0
STEER_NOISE = 0.05
# fraction of the pre-obstacle lateral budget a start may sit from its gap
REACH_FRACTION = 0.75


class InfeasibleGapError(ValueError):
    pass


def gap_controller(config: DrivingConfig, gap_choice: str, noise: float = STEER_NOISE):
    """Steering rule: head for the chosen gap's centre, then for x = 0.5 once
    past the obstacle band."""
    gaps = config.gaps()
    if gap_choice not in gaps:
        raise InfeasibleGapError(f"gap {gap_choice!r} is closed for widths {config.obstacle_widths}")
    lo, hi = gaps[gap_choice]
    centre = 0.5 * (lo + hi)

    def act(state, rng):
        x, y = state
        if y <= OBSTACLE_Y[1]:
            a = APPROACH_GAIN * (centre - x)
        else:
            a = EXIT_GAIN * (0.5 - x)
        if noise:
            a += noise * rng.normal()
        return float(np.clip(a, -1.0, 1.0))

    return act, centre


def reachable_start(config: DrivingConfig, centre: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform start x conditioned on the gap centre being reachable in time."""
    reach = REACH_FRACTION * OBSTACLE_Y[0]
    lo, hi = max(0.0, centre - reach), min(1.0, centre + reach)
    while True:
        s = driving_reset(config, rng)
        if lo <= s[0] <= hi:
            return s


def scripted_driving_demo(config: DrivingConfig, gap_choice: str, rng: np.random.Generator,
                          trajectory_id: str = "", source_tag: str = "") -> Trajectory:
    act, centre = gap_controller(config, gap_choice)
    env = DrivingEnv(config)
    start = reachable_start(config, centre, rng)
    ep = rollout(env, act, rng, start=start)
    if ep.cause != GOAL:
        raise RuntimeError(f"scripted demonstrator ended with {CAUSE_NAMES[ep.cause]} "
                           f"(widths {config.obstacle_widths}, gap {gap_choice})")
    return Trajectory(ep.states, trajectory_id, source_tag)


def scripted_pointmass_demo(config: PointMassConfig, rng: np.random.Generator,
                            trajectory_id: str = "", source_tag: str = "",
                            kp: float = 4.0, kd: float = 2.0) -> Trajectory:
    """PD controller towards the target with small actuation noise."""
    env = PointMassEnv(config)

    def act(state, rng):
        x, v = state
        a = (kp * (config.target - x) - kd * v) / config.force_gain
        return float(np.clip(a + STEER_NOISE * rng.normal(), -1.0, 1.0))

    ep = rollout(env, act, rng)
    return Trajectory(ep.states, trajectory_id, source_tag)


def expected_demo_steps(config: DrivingConfig) -> int:
    return math.ceil((1.0 - GOAL_EPS) / (config.step_size * config.speed))
