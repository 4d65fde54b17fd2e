"""Small environment simulators: gridworld, MountainCar (discrete and
continuous) and CartPole.

Observations handed to agents are min-max normalised to ``[0, 1]^d``;
attack radii are measured in that normalised space. One ``step`` call is
one agent decision and repeats the action ``frame_skip`` times. Episode
caps count raw frames, like the usual time-limit wrappers, so returns are
sums of per-frame rewards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import TabularMdp

UP, RIGHT, DOWN, LEFT = range(4)
_MOVES = {UP: (-1, 0), RIGHT: (0, 1), DOWN: (1, 0), LEFT: (0, -1)}


@dataclass(frozen=True)
class GridPos:
    row: int
    col: int


@dataclass
class EnvStep:
    observation: np.ndarray
    reward: float
    done: bool
    truncated: bool = False
    frames: int = 1


class EpisodeDoneError(RuntimeError):
    pass


def make_gridworld(width: int = 6, height: int = 6, gamma: float = 1.0) -> TabularMdp:
    """Gridworld with goals in the top-left and bottom-right corners.

    State id is ``row * width + col``; actions are up/right/down/left (0-3);
    moves off the grid leave the agent in place; every non-terminal step
    costs 1.
    """
    if width < 2 or height < 2:
        raise ValueError("gridworld needs width, height >= 2")
    n = width * height
    terminal = {0, n - 1}
    trans, reward = {}, {}
    for s in range(n):
        r, c = divmod(s, width)
        for a, (dr, dc) in _MOVES.items():
            if s in terminal:
                trans[s, a] = ((s, 1.0),)
                reward[s, a] = 0.0
                continue
            rr, cc = r + dr, c + dc
            if not (0 <= rr < height and 0 <= cc < width):
                rr, cc = r, c
            trans[s, a] = ((rr * width + cc, 1.0),)
            reward[s, a] = -1.0
    p0 = np.array([0.0 if s in terminal else 1.0 for s in range(n)])
    p0 /= p0.sum()
    return TabularMdp(n, tuple(tuple(range(4)) for _ in range(n)), trans, reward, p0, gamma, frozenset(terminal))


def grid_coords(width: int, height: int) -> np.ndarray:
    """Integer ``(row, col)`` of every state, in state-id order."""
    return np.array([divmod(s, width) for s in range(width * height)], dtype=float)


class Env:
    """Common machinery: seeding, frame skip, step caps, normalisation."""

    name = "env"
    state_dim: int
    n_actions: int | None = None  # None for continuous actions
    action_dim: int = 1
    action_low = -1.0
    action_high = 1.0
    obs_low: np.ndarray
    obs_high: np.ndarray
    max_frames: int
    reward_floor: float

    def __init__(self, frame_skip: int = 4, seed: int | None = None):
        if frame_skip < 1:
            raise ValueError("frame_skip must be >= 1")
        self.frame_skip = frame_skip
        self.rng = np.random.default_rng(seed)
        self.state = None
        self.frames = 0
        self.steps = 0
        self.done = True

    @property
    def discrete(self) -> bool:
        return self.n_actions is not None

    def normalize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x - self.obs_low) / (self.obs_high - self.obs_low)

    def denormalize(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.obs_low + y * (self.obs_high - self.obs_low)

    def observe(self) -> np.ndarray:
        return np.clip(self.normalize(self.state), 0.0, 1.0)

    def reset(self, seed: int | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
        if rng is not None:
            self.rng = rng
        elif seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = self._initial_state()
        self.frames = 0
        self.steps = 0
        self.done = False
        return self.observe()

    def step(self, action, frames: int | None = None) -> EnvStep:
        """Repeat ``action`` for ``frames`` frames (default: the frame skip)."""
        if self.done:
            raise EpisodeDoneError("step() called on a finished episode; call reset()")
        total = 0.0
        terminal = False
        k = 0
        for k in range(1, (frames or self.frame_skip) + 1):
            self.state, r, terminal = self._frame(self.state, action)
            total += r
            self.frames += 1
            if terminal or self.frames >= self.max_frames:
                break
        self.steps += 1
        truncated = not terminal and self.frames >= self.max_frames
        self.done = terminal or truncated
        return EnvStep(self.observe(), float(total), self.done, truncated, k)

    def random_start(self, rng: np.random.Generator, max_steps: int) -> np.ndarray:
        """Play between 0 and ``max_steps - 1`` single random frames after a reset.

        These frames count toward the episode cap but are not scored; the
        observation after them is returned.
        """
        if max_steps > 0:
            for _ in range(int(rng.integers(max_steps))):
                if self.step(self.sample_action(rng), frames=1).done:
                    return self.reset()  # start over rather than hand over a finished episode
        return self.observe()

    def sample_action(self, rng: np.random.Generator):
        if self.discrete:
            return int(rng.integers(self.n_actions))
        return rng.uniform(self.action_low, self.action_high, size=self.action_dim)

    def _initial_state(self) -> np.ndarray:
        raise NotImplementedError

    def _frame(self, state, action):
        raise NotImplementedError


class MountainCar(Env):
    name = "mountaincar"
    state_dim = 2
    n_actions = 3
    obs_low = np.array([-1.2, -0.07])
    obs_high = np.array([0.6, 0.07])
    max_frames = 200
    reward_floor = -200.0
    force = 0.001
    gravity = 0.0025
    goal_position = 0.5

    def _initial_state(self):
        return np.array([self.rng.uniform(-0.6, -0.4), 0.0])

    def _frame(self, state, action):
        if not 0 <= int(action) < 3:
            raise ValueError(f"invalid action {action}")
        pos, vel = state
        vel += (int(action) - 1) * self.force - math.cos(3 * pos) * self.gravity
        vel = min(max(vel, -0.07), 0.07)
        pos += vel
        pos = min(max(pos, -1.2), 0.6)
        if pos == -1.2 and vel < 0:
            vel = 0.0
        done = pos >= self.goal_position
        return np.array([pos, vel]), -1.0, done


class ContinuousMountainCar(Env):
    name = "mountaincar-continuous"
    state_dim = 2
    n_actions = None
    action_dim = 1
    obs_low = np.array([-1.2, -0.07])
    obs_high = np.array([0.6, 0.07])
    max_frames = 999
    reward_floor = -100.0
    power = 0.0015
    goal_position = 0.45

    def _initial_state(self):
        return np.array([self.rng.uniform(-0.6, -0.4), 0.0])

    def _frame(self, state, action):
        force = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -1.0, 1.0))
        pos, vel = state
        vel += force * self.power - 0.0025 * math.cos(3 * pos)
        vel = min(max(vel, -0.07), 0.07)
        pos += vel
        pos = min(max(pos, -1.2), 0.6)
        if pos == -1.2 and vel < 0:
            vel = 0.0
        done = pos >= self.goal_position and vel >= 0
        reward = -0.1 * force**2 + (100.0 if done else 0.0)
        return np.array([pos, vel]), reward, done


class CartPole(Env):
    name = "cartpole"
    state_dim = 4
    n_actions = 2
    # velocity bounds are declared for normalisation; observations are clamped
    obs_low = np.array([-4.8, -3.0, -0.418879, -3.5])
    obs_high = np.array([4.8, 3.0, 0.418879, 3.5])
    max_frames = 200
    reward_floor = 0.0
    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5
    force_mag = 10.0
    tau = 0.02
    theta_threshold = 12 * 2 * math.pi / 360
    x_threshold = 2.4

    def _initial_state(self):
        return self.rng.uniform(-0.05, 0.05, size=4)

    def _frame(self, state, action):
        if int(action) not in (0, 1):
            raise ValueError(f"invalid action {action}")
        x, x_dot, theta, theta_dot = state
        force = self.force_mag if int(action) == 1 else -self.force_mag
        total_mass = self.masscart + self.masspole
        polemass_length = self.masspole * self.length
        cos, sin = math.cos(theta), math.sin(theta)
        temp = (force + polemass_length * theta_dot**2 * sin) / total_mass
        theta_acc = (self.gravity * sin - cos * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * cos**2 / total_mass)
        )
        x_acc = temp - polemass_length * theta_acc * cos / total_mass
        x += self.tau * x_dot
        x_dot += self.tau * x_acc
        theta += self.tau * theta_dot
        theta_dot += self.tau * theta_acc
        done = abs(x) > self.x_threshold or abs(theta) > self.theta_threshold
        return np.array([x, x_dot, theta, theta_dot]), 1.0, done


class GridWorldEnv(Env):
    """Step simulator over :func:`make_gridworld`; observations are
    normalised ``(row, col)`` coordinates."""

    name = "gridworld"
    state_dim = 2
    n_actions = 4

    def __init__(self, width: int = 6, height: int = 6, frame_skip: int = 1, seed: int | None = None, max_steps: int | None = None):
        super().__init__(frame_skip=frame_skip, seed=seed)
        self.width, self.height = width, height
        self.mdp = make_gridworld(width, height)
        self.obs_low = np.zeros(2)
        self.obs_high = np.array([height - 1, width - 1], dtype=float)
        self.max_frames = max_steps if max_steps is not None else 2 * (width + height)
        self.reward_floor = -float(self.max_frames)
        self.cell = 0

    def state_obs(self, s: int) -> np.ndarray:
        return self.normalize(np.array(divmod(int(s), self.width), dtype=float))

    def obs_state(self, obs) -> int:
        r, c = np.rint(self.denormalize(obs)).astype(int)
        r = min(max(r, 0), self.height - 1)
        c = min(max(c, 0), self.width - 1)
        return int(r * self.width + c)

    def reset_to(self, s: int) -> np.ndarray:
        self.reset()
        self.cell = int(s)
        self.state = np.array(divmod(self.cell, self.width), dtype=float)
        self.done = self.cell in self.mdp.terminal
        return self.observe()

    def _initial_state(self):
        p0 = self.mdp.initial_dist
        self.cell = int(self.rng.choice(len(p0), p=p0))
        return np.array(divmod(self.cell, self.width), dtype=float)

    def _frame(self, state, action):
        a = int(action)
        if a not in self.mdp.actions[self.cell]:
            raise ValueError(f"invalid action {action}")
        row = self.mdp.transition[self.cell, a]
        nxt = [t for t, _ in row]
        p = [q for _, q in row]
        r = self.mdp.reward[self.cell, a]
        self.cell = int(nxt[0]) if len(nxt) == 1 else int(self.rng.choice(nxt, p=p))
        return np.array(divmod(self.cell, self.width), dtype=float), r, self.cell in self.mdp.terminal


ENV_NAMES = ("gridworld", "mountaincar", "mountaincar-continuous", "cartpole")


def make_env(name: str, frame_skip: int | None = None, seed: int | None = None) -> Env:
    if name == "gridworld":
        return GridWorldEnv(frame_skip=frame_skip or 1, seed=seed)
    classes = {"mountaincar": MountainCar, "mountaincar-continuous": ContinuousMountainCar, "cartpole": CartPole}
    if name not in classes:
        raise ValueError(f"unknown environment {name!r}; choose from {', '.join(ENV_NAMES)}")
    return classes[name](frame_skip=4 if frame_skip is None else frame_skip, seed=seed)


def make_mountaincar(discrete: bool = True, frame_skip: int = 4, seed: int | None = None) -> Env:
    return MountainCar(frame_skip, seed) if discrete else ContinuousMountainCar(frame_skip, seed)


def make_cartpole(frame_skip: int = 4, seed: int | None = None) -> Env:
    return CartPole(frame_skip, seed)
