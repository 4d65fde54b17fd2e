"""Main-agent training (DQN, DDPG, DRQN-lite) and evaluation rollouts."""
from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .envs import Env, GridWorldEnv, make_env
from .mdp import TabularPolicy
from .neural import Adam, Mlp, RecurrentNet, dump_net, hard_update, load_net, soft_update, softmax_backward, softmax_temp
from .seeding import substream

LOSS_LIMIT = 1e6


class TrainingDivergedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# replay


class ReplayBuffer:
    """Fixed-capacity FIFO ring of ``(s, a, r, s', terminal)`` with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int = 1, rng: np.random.Generator | None = None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.rng = rng or np.random.default_rng()
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, obs_dim))
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.pos = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s2, terminal) -> None:
        i = self.pos
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self.terminal[i] = terminal
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch: int) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return self.rng.integers(0, self.size, size=batch)

    def sample(self, batch: int):
        i = self.sample_indices(batch)
        return self.s[i], self.a[i], self.r[i], self.s2[i], self.terminal[i]


class SequenceReplay(ReplayBuffer):
    """Replay that also remembers episode boundaries, for recurrent training.

    :meth:`sample_windows` returns windows of ``window`` consecutive
    transitions ending at a uniformly drawn index; steps that fall before
    the episode start (or were already evicted) are masked out.
    """

    def __init__(self, capacity: int, obs_dim: int, action_dim: int = 1, rng=None):
        super().__init__(capacity, obs_dim, action_dim, rng)
        self.episode = np.full(capacity, -1, dtype=np.int64)
        self.stamp = np.zeros(capacity, dtype=np.int64)
        self._count = 0
        self._episode_id = 0

    def new_episode(self) -> None:
        self._episode_id += 1

    def add(self, s, a, r, s2, terminal) -> None:
        i = self.pos
        self.episode[i] = self._episode_id
        self.stamp[i] = self._count
        self._count += 1
        super().add(s, a, r, s2, terminal)

    def sample_windows(self, batch: int, window: int):
        end = self.sample_indices(batch)
        offs = np.arange(-window + 1, 1)
        idx = (end[:, None] + offs[None, :]) % self.capacity  # (B, W)
        same_ep = self.episode[idx] == self.episode[end][:, None]
        contiguous = (self.stamp[end][:, None] - self.stamp[idx]) == -offs[None, :]
        mask = same_ep & contiguous & (np.arange(self.capacity)[idx] < self.size)
        # a window never straddles an episode start, so keep only the valid suffix
        mask = np.flip(np.logical_and.accumulate(np.flip(mask, 1), axis=1), 1)
        tr = lambda x: np.swapaxes(x[idx], 0, 1)  # noqa: E731  (W, B, ...)
        return tr(self.s), tr(self.a), tr(self.r), tr(self.s2), tr(self.terminal), mask.T


# ---------------------------------------------------------------------------
# configuration


@dataclass
class AgentConfig:
    algo: str = "dqn"
    steps: int = 40_000
    warmup: int = 100
    memory: int = 40_000
    gamma: float = 0.99
    lr: float = 1e-3
    lr_critic: float = 1e-3
    clip: float | None = None
    explore_initial: float = 0.95
    explore_final: float = 0.1
    explore_steps: int = 28_000
    batch_size: int = 32
    target_update: float = 100
    frame_skip: int = 4
    train_random_steps: int = 0
    test_random_steps: int = 10
    hidden: tuple[int, ...] = (512, 256, 64)
    critic_hidden: tuple[int, ...] = (400, 300)
    window: int = 8
    train_every: int = 1
    timeout_terminal: bool = True  # treat the episode cap as a terminal transition

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.critic_hidden = tuple(int(h) for h in self.critic_hidden)
        if not 0 < self.gamma < 1:
            raise ValueError("agent gamma must lie in (0, 1)")
        if self.steps < 0 or self.batch_size < 1 or self.memory < 1:
            raise ValueError("steps, batch_size and memory must be non-negative/positive")

    def exploration(self, step: int) -> float:
        """Linear anneal from ``explore_initial`` to ``explore_final``."""
        if self.explore_steps <= 0:
            return self.explore_final
        frac = min(1.0, step / self.explore_steps)
        return self.explore_initial + frac * (self.explore_final - self.explore_initial)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> AgentConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown agent config keys: {sorted(unknown)}")
        return cls(**d)


PRESETS: dict[tuple[str, str], dict] = {
    ("mountaincar", "dqn"): dict(algo="dqn"),
    ("mountaincar", "drqn"): dict(algo="drqn", hidden=(64, 64), window=8),
    ("cartpole", "dqn"): dict(
        algo="dqn", steps=22_000, warmup=1_000, memory=22_000, lr=1e-4, clip=1.0,
        explore_steps=11_000, batch_size=256, target_update=200, hidden=(256, 256),
    ),
    ("cartpole", "drqn"): dict(
        algo="drqn", steps=22_000, warmup=1_000, memory=22_000, lr=1e-4, clip=1.0,
        explore_steps=11_000, batch_size=256, target_update=200, hidden=(64, 64),
    ),
    ("mountaincar-continuous", "ddpg"): dict(
        algo="ddpg", steps=20_000, warmup=1_000, memory=20_000, lr=1e-4, lr_critic=1e-3, clip=1.0,
        explore_initial=2.0, explore_final=1e-3, explore_steps=14_000, batch_size=64,
        target_update=1e-3, hidden=(400, 300), critic_hidden=(400, 300),
    ),
    ("gridworld", "dqn"): dict(
        algo="dqn", steps=6_000, warmup=200, memory=6_000, explore_initial=1.0, explore_final=0.05,
        explore_steps=3_000, target_update=100, frame_skip=1, test_random_steps=0, hidden=(64, 64),
    ),
    ("gridworld", "drqn"): dict(
        algo="drqn", steps=6_000, warmup=200, memory=6_000, explore_initial=1.0, explore_final=0.05,
        explore_steps=3_000, target_update=100, frame_skip=1, test_random_steps=0, hidden=(64, 64),
    ),
}


def preset(env_name: str, algo: str, **overrides) -> AgentConfig:
    try:
        base = dict(PRESETS[env_name, algo])
    except KeyError:
        raise ValueError(f"no preset for algorithm {algo!r} on {env_name!r}") from None
    base.update(overrides)
    return AgentConfig(**base)


# ---------------------------------------------------------------------------
# trained agents


class Agent(Protocol):
    algo: str
    env_name: str

    def reset(self) -> None: ...
    def act(self, obs: np.ndarray): ...


def _argmax(q: np.ndarray) -> int:
    return int(np.flatnonzero(q == q.max())[0])


@dataclass
class DqnAgent:
    net: Mlp
    env_name: str
    config: AgentConfig
    log: list[dict] = field(default_factory=list)
    algo = "dqn"

    def reset(self) -> None:
        pass

    def q_values(self, obs) -> np.ndarray:
        return self.net(obs)

    def act(self, obs) -> int:
        return _argmax(self.net(obs))

    def action_probs(self, obs, T: float = 1.0) -> np.ndarray:
        return softmax_temp(self.net(obs), T)

    def logits_input_grad(self, obs, grad_logits) -> np.ndarray:
        return self.net.input_grad(obs, grad_logits)

    # differentiable action used by the white-box attack critic
    def action_vector(self, obs, T: float = 1.0) -> np.ndarray:
        return self.action_probs(obs, T)

    def action_vector_vjp(self, obs, grad, T: float = 1.0) -> np.ndarray:
        p = self.action_probs(obs, T)
        return self.logits_input_grad(obs, softmax_backward(p, grad, T))

    @property
    def action_vector_dim(self) -> int:
        return self.net.out_dim


@dataclass
class DrqnAgent:
    """Recurrent Q-agent; :meth:`act` advances the hidden state."""

    net: RecurrentNet
    env_name: str
    config: AgentConfig
    log: list[dict] = field(default_factory=list)
    algo = "drqn"
    h: np.ndarray | None = None

    def reset(self) -> None:
        self.h = self.net.initial_state()

    def _hidden(self) -> np.ndarray:
        if self.h is None:
            self.reset()
        return self.h

    def q_values(self, obs) -> np.ndarray:
        return self.net.step(obs, self._hidden())[0]

    def act(self, obs) -> int:
        q, self.h = self.net.step(obs, self._hidden())
        return _argmax(q)

    def action_probs(self, obs, T: float = 1.0) -> np.ndarray:
        return softmax_temp(self.q_values(obs), T)

    def logits_input_grad(self, obs, grad_logits) -> np.ndarray:
        xs = np.asarray(obs, dtype=float)[None, None, :]
        _, cache = self.net.forward_sequence(xs, self._hidden()[None, :])
        return self.net.backward_sequence(cache, np.asarray(grad_logits, dtype=float)[None, None, :])[1][0, 0]

    def action_vector(self, obs, T: float = 1.0) -> np.ndarray:
        return self.action_probs(obs, T)

    def action_vector_vjp(self, obs, grad, T: float = 1.0) -> np.ndarray:
        p = self.action_probs(obs, T)
        return self.logits_input_grad(obs, softmax_backward(p, grad, T))

    @property
    def action_vector_dim(self) -> int:
        return self.net.out_dim


@dataclass
class DdpgAgent:
    actor: Mlp
    critic: Mlp
    env_name: str
    config: AgentConfig
    action_low: float = -1.0
    action_high: float = 1.0
    log: list[dict] = field(default_factory=list)
    algo = "ddpg"

    def reset(self) -> None:
        pass

    def _scale(self, u):
        return self.action_low + (u + 1.0) * 0.5 * (self.action_high - self.action_low)

    def act(self, obs) -> np.ndarray:
        return self._scale(self.actor(obs))

    def q_value(self, obs, action) -> float:
        x = np.concatenate([np.asarray(obs, dtype=float), np.asarray(action, dtype=float).reshape(-1)])
        return float(self.critic(x)[0])

    def action_vector(self, obs) -> np.ndarray:
        return self.act(obs)

    def action_vector_vjp(self, obs, grad) -> np.ndarray:
        g = np.asarray(grad, dtype=float) * 0.5 * (self.action_high - self.action_low)
        return self.actor.input_grad(obs, g)

    @property
    def action_vector_dim(self) -> int:
        return self.actor.out_dim

    def value_input_grad(self, state, perceived) -> np.ndarray:
        """Gradient of ``Q(state, mu(perceived))`` with respect to ``perceived``."""
        a = self.act(perceived)
        x = np.concatenate([np.asarray(state, dtype=float), a])
        g_in = self.critic.input_grad(x, np.ones(1))
        return self.action_vector_vjp(perceived, g_in[len(state):])


class TabularAgent:
    """Greedy agent over a tabular gridworld policy, acting on observations."""

    algo = "tabular"

    def __init__(self, policy: TabularPolicy, width: int = 6, height: int = 6):
        self.policy = policy
        self.grid = GridWorldEnv(width, height)
        self.env_name = self.grid.name
        self.config = AgentConfig(**PRESETS[("gridworld", "dqn")])
        self.log: list[dict] = []

    def reset(self) -> None:
        pass

    def act(self, obs) -> int:
        return self.policy.greedy_action(self.grid.obs_state(obs))

    def action_probs(self, obs) -> np.ndarray:
        return self.policy.dist(self.grid.obs_state(obs))


# ---------------------------------------------------------------------------
# training


def _check_loss(loss: float, step: int, what: str) -> None:
    if not np.isfinite(loss) or loss > LOSS_LIMIT:
        raise TrainingDivergedError(f"{what} loss {loss:.3e} at step {step} (limit {LOSS_LIMIT:.0e})")


def _is_terminal(st, config: AgentConfig) -> bool:
    return st.done and (config.timeout_terminal or not st.truncated)


def _log_episode(log, episode, step, ret, length):
    log.append({"episode": episode, "step": step, "return": ret, "length": length})


def train_dqn(env: Env, config: AgentConfig, seed: int) -> DqnAgent:
    """DQN with epsilon-greedy annealing, uniform replay and a periodically
    refreshed target network."""
    if not env.discrete:
        raise ValueError("DQN needs a discrete-action environment")
    rng = substream(seed, "dqn")
    net_rng = substream(seed, "dqn-init")
    acts = ["relu"] * len(config.hidden) + ["linear"]
    net = Mlp.build((env.state_dim, *config.hidden, env.n_actions), acts, net_rng)
    target = net.copy()
    opt = Adam(net.params(), lr=config.lr, clip_norm=config.clip)
    buf = ReplayBuffer(config.memory, env.state_dim, 1, substream(seed, "dqn-replay"))
    period = max(1, int(round(config.target_update)))
    agent = DqnAgent(net, env.name, config)

    obs = env.reset(rng=substream(seed, "dqn-env"))
    ep_ret, ep_len, episode = 0.0, 0, 0
    gamma = config.gamma
    for step in range(config.steps):
        if rng.random() < config.exploration(step):
            a = int(rng.integers(env.n_actions))
        else:
            a = _argmax(net(obs))
        st = env.step(a)
        buf.add(obs, a, st.reward, st.observation, _is_terminal(st, config))
        ep_ret += st.reward
        ep_len += 1
        obs = st.observation
        if st.done:
            _log_episode(agent.log, episode, step + 1, ep_ret, ep_len)
            episode += 1
            ep_ret, ep_len = 0.0, 0
            obs = env.reset()

        if step >= config.warmup and step % config.train_every == 0 and len(buf) >= config.batch_size:
            s, a_b, r, s2, term = buf.sample(config.batch_size)
            y = r + gamma * (~term) * target(s2).max(axis=1)
            q, cache = net.forward(s)
            idx = a_b[:, 0].astype(int)
            err = q[np.arange(len(idx)), idx] - y
            loss = float(np.mean(err**2))
            _check_loss(loss, step, "DQN")
            g = np.zeros_like(q)
            g[np.arange(len(idx)), idx] = 2.0 * err / len(idx)
            grads, _ = net.backward(cache, g)
            opt.step(grads)
        if (step + 1) % period == 0:
            hard_update(target, net)
    return agent


def train_drqn_lite(env: Env, config: AgentConfig, seed: int) -> DrqnAgent:
    """Recurrent Q-learning on replayed windows of ``config.window`` steps.

    The hidden state starts at zero at the beginning of each sampled window
    and is carried across the whole episode while acting.
    """
    if not env.discrete:
        raise ValueError("DRQN needs a discrete-action environment")
    rng = substream(seed, "drqn")
    hidden = config.hidden[0]
    head = (*config.hidden[1:], env.n_actions)
    net = RecurrentNet.build(env.state_dim, hidden, head, ["relu"] * (len(head) - 1) + ["linear"], substream(seed, "drqn-init"))
    target = net.copy()
    opt = Adam(net.params(), lr=config.lr, clip_norm=config.clip)
    buf = SequenceReplay(config.memory, env.state_dim, 1, substream(seed, "drqn-replay"))
    period = max(1, int(round(config.target_update)))
    agent = DrqnAgent(net, env.name, config)
    W = config.window

    obs = env.reset(rng=substream(seed, "drqn-env"))
    buf.new_episode()
    agent.reset()
    ep_ret, ep_len, episode = 0.0, 0, 0
    for step in range(config.steps):
        q, agent.h = net.step(obs, agent.h)
        if rng.random() < config.exploration(step):
            a = int(rng.integers(env.n_actions))
        else:
            a = _argmax(q)
        st = env.step(a)
        buf.add(obs, a, st.reward, st.observation, _is_terminal(st, config))
        ep_ret += st.reward
        ep_len += 1
        obs = st.observation
        if st.done:
            _log_episode(agent.log, episode, step + 1, ep_ret, ep_len)
            episode += 1
            ep_ret, ep_len = 0.0, 0
            obs = env.reset()
            agent.reset()
            buf.new_episode()

        if step >= config.warmup and step % config.train_every == 0 and len(buf) >= config.batch_size:
            s, a_b, r, s2, term, mask = buf.sample_windows(config.batch_size, W)
            # target pass sees the same history, shifted one step forward
            seq = np.concatenate([s, s2[-1:]], axis=0)
            seq_mask = np.concatenate([mask, np.ones((1, mask.shape[1]), dtype=bool)], axis=0)
            q_next, _ = target.forward_sequence(seq, mask=seq_mask)
            y = r + config.gamma * (~term) * q_next[1:].max(axis=2)
            qs, cache = net.forward_sequence(s, mask=mask)
            idx = a_b[..., 0].astype(int)
            chosen = np.take_along_axis(qs, idx[..., None], axis=2)[..., 0]
            err = (chosen - y) * mask
            n_valid = max(1, int(mask.sum()))
            loss = float((err**2).sum() / n_valid)
            _check_loss(loss, step, "DRQN")
            g = np.zeros_like(qs)
            np.put_along_axis(g, idx[..., None], (2.0 * err / n_valid)[..., None], axis=2)
            grads, _ = net.backward_sequence(cache, g)
            opt.step(grads)
        if (step + 1) % period == 0:
            hard_update(target, net)
    agent.reset()
    return agent


def train_ddpg(env: Env, config: AgentConfig, seed: int) -> DdpgAgent:
    """DDPG with annealed Gaussian exploration and soft target updates."""
    if env.discrete:
        raise ValueError("DDPG needs a continuous-action environment")
    rng = substream(seed, "ddpg")
    init = substream(seed, "ddpg-init")
    d, k = env.state_dim, env.action_dim
    actor = Mlp.build((d, *config.hidden, k), ["relu"] * len(config.hidden) + ["tanh"], init)
    critic = Mlp.build((d + k, *config.critic_hidden, 1), ["relu"] * len(config.critic_hidden) + ["linear"], init)
    actor_t, critic_t = actor.copy(), critic.copy()
    opt_a = Adam(actor.params(), lr=config.lr, clip_norm=config.clip)
    opt_c = Adam(critic.params(), lr=config.lr_critic, clip_norm=config.clip)
    buf = ReplayBuffer(config.memory, d, k, substream(seed, "ddpg-replay"))
    agent = DdpgAgent(actor, critic, env.name, config, env.action_low, env.action_high)
    tau = float(config.target_update)
    lo, hi = env.action_low, env.action_high

    obs = env.reset(rng=substream(seed, "ddpg-env"))
    ep_ret, ep_len, episode = 0.0, 0, 0
    for step in range(config.steps):
        std = config.exploration(step)
        a = np.clip(agent.act(obs) + rng.normal(0.0, std, size=k), lo, hi)
        st = env.step(a)
        buf.add(obs, a, st.reward, st.observation, _is_terminal(st, config))
        ep_ret += st.reward
        ep_len += 1
        obs = st.observation
        if st.done:
            _log_episode(agent.log, episode, step + 1, ep_ret, ep_len)
            episode += 1
            ep_ret, ep_len = 0.0, 0
            obs = env.reset()

        if step >= config.warmup and len(buf) >= config.batch_size:
            ddpg_update(actor, critic, actor_t, critic_t, opt_a, opt_c, buf.sample(config.batch_size), config.gamma, tau, lo, hi, step)
    return agent


def ddpg_update(actor, critic, actor_t, critic_t, opt_a, opt_c, batch, gamma, tau, lo, hi, step) -> float:
    s, a, r, s2, term = batch
    half = 0.5 * (hi - lo)
    a2 = lo + (actor_t(s2) + 1.0) * half
    y = r + gamma * (~term) * critic_t(np.concatenate([s2, a2], axis=1))[:, 0]
    q, cache = critic.forward(np.concatenate([s, a], axis=1))
    err = q[:, 0] - y
    loss = float(np.mean(err**2))
    _check_loss(loss, step, "critic")
    grads, _ = critic.backward(cache, (2.0 * err / len(err))[:, None])
    opt_c.step(grads)

    u, a_cache = actor.forward(s)
    qa, c_cache = critic.forward(np.concatenate([s, lo + (u + 1.0) * half], axis=1))
    _, g_in = critic.backward(c_cache, -np.ones_like(qa) / len(qa))
    grads, _ = actor.backward(a_cache, g_in[:, s.shape[1]:] * half)
    opt_a.step(grads)
    soft_update(critic_t, critic, tau)
    soft_update(actor_t, actor, tau)
    return loss


TRAINERS = {"dqn": train_dqn, "drqn": train_drqn_lite, "ddpg": train_ddpg}


def train_agent(env_name: str, config: AgentConfig, seed: int):
    env = make_env(env_name, frame_skip=config.frame_skip)
    try:
        trainer = TRAINERS[config.algo]
    except KeyError:
        raise ValueError(f"unknown algorithm {config.algo!r}") from None
    return trainer(env, config, seed)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalRecord:
    run_id: str
    env: str
    agent_algo: str
    attack_algo: str
    epsilon: float
    norm: str
    seed: int
    episode: int
    ret: float
    length: int

    FIELDS = ("run_id", "env", "agent_algo", "attack_algo", "epsilon", "norm", "seed", "episode", "return", "length")

    def row(self) -> list:
        return [self.run_id, self.env, self.agent_algo, self.attack_algo, repr(float(self.epsilon)), self.norm,
                self.seed, self.episode, repr(float(self.ret)), self.length]


def run_episode(env: Env, agent, attack=None, rng: np.random.Generator | None = None, random_steps: int = 0) -> tuple[float, int]:
    """One episode; the agent sees ``attack.perturb(s)`` while the env evolves from ``s``.

    ``random_steps`` is the maximum number of unscored random frames played
    before the agent takes over (see :meth:`Env.random_start`).
    """
    rng = rng or np.random.default_rng()
    env.reset(rng=rng)
    obs = env.random_start(rng, random_steps)
    agent.reset()
    if attack is not None:
        attack.reset()
    total, length = 0.0, 0
    while not env.done:
        seen = attack.perturb(obs) if attack is not None else obs
        st = env.step(agent.act(seen))
        total += st.reward
        length += 1
        obs = st.observation
    return total, length


def evaluate_policy(env: Env, agent, attack=None, episodes: int = 30, seed: int = 0,
                    random_steps: int | None = None, run_id: str = "", seed_index: int = 0) -> list[EvalRecord]:
    """Roll out ``episodes`` episodes; episode ``k`` of seed index ``i`` runs on
    substream ``(seed, "episode", i, k)``."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if agent.env_name != env.name:
        raise ValueError(f"agent was trained on {agent.env_name!r}, not {env.name!r}")
    if random_steps is None:
        random_steps = agent.config.test_random_steps if hasattr(agent, "config") else 0
    attack_name = getattr(attack, "name", "none") if attack is not None else "none"
    eps = float(getattr(attack, "epsilon", 0.0)) if attack is not None else 0.0
    norm = getattr(attack, "norm", "-") if attack is not None else "-"
    out = []
    for ep in range(episodes):
        rng = substream(seed, "episode", seed_index, ep)
        ret, length = run_episode(env, agent, attack, rng, random_steps)
        out.append(EvalRecord(run_id, env.name, agent.algo, attack_name, eps, norm, seed_index, ep, ret, length))
    return out


# ---------------------------------------------------------------------------
# persistence


def save_agent(agent, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    meta = {"algo": agent.algo, "env": agent.env_name, "config": agent.config.to_dict()}
    if agent.algo == "ddpg":
        meta["action_low"], meta["action_high"] = agent.action_low, agent.action_high
        _write(os.path.join(directory, "actor.net"), dump_net(agent.actor))
        _write(os.path.join(directory, "critic.net"), dump_net(agent.critic))
    else:
        _write(os.path.join(directory, "q.net"), dump_net(agent.net))
    _write(os.path.join(directory, "agent.json"), json.dumps(meta, indent=2, sort_keys=True))
    with open(os.path.join(directory, "train_log.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "step", "return", "length"])
        for row in agent.log:
            w.writerow([row["episode"], row["step"], repr(float(row["return"])), row["length"]])


def load_agent(directory: str):
    path = os.path.join(directory, "agent.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no trained agent in {directory!r}")
    with open(path, encoding="utf-8") as fh:
        meta = json.load(fh)
    config = AgentConfig.from_dict(meta["config"])
    log = []
    log_path = os.path.join(directory, "train_log.csv")
    if os.path.exists(log_path):
        with open(log_path, encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                log.append({"episode": int(row["episode"]), "step": int(row["step"]),
                            "return": float(row["return"]), "length": int(row["length"])})
    if meta["algo"] == "ddpg":
        actor = load_net(_read(os.path.join(directory, "actor.net")))
        critic = load_net(_read(os.path.join(directory, "critic.net")))
        return DdpgAgent(actor, critic, meta["env"], config, meta["action_low"], meta["action_high"], log)
    net = load_net(_read(os.path.join(directory, "q.net")))
    cls = DrqnAgent if meta["algo"] == "drqn" else DqnAgent
    return cls(net, meta["env"], config, log)


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()
