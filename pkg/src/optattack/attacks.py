"""Attack generators.

Tabular gradient-attack baselines (best-action and Q-based variants), the
fast gradient method for networks, and the learned DDPG-style adversary in
its black-box and white-box forms. All learned attacks work in the
normalised observation space ``[0, 1]^d``:

    s_bar = clamp(s + project(actor(s)))

Clamping to the box only moves each coordinate back towards ``s``, so the
emitted perturbation never exceeds the projection radius.
"""
from __future__ import annotations

import copy
import csv
import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .agents import LOSS_LIMIT, ReplayBuffer, TrainingDivergedError
from .attack_mdp import TabularAttack, norm_order
from .envs import Env
from .mdp import TabularPolicy
from .neural import Adam, Mlp, dump_net, load_net, project_ball, project_ball_backward, soft_update
from .seeding import substream

# ---------------------------------------------------------------------------
# tabular baselines


def _scan_order(s: int, neighbors: Sequence[int]) -> list[int]:
    """``s`` first, then the rest in ascending id: strict improvement keeps ``s`` on ties."""
    return [s] + sorted(int(x) for x in neighbors if int(x) != s)


def huang_attack(s: int, policy: TabularPolicy, neighbors: Sequence[int]) -> int:
    """Neighbour that makes the agent's preferred action least likely."""
    a_star = policy.greedy_action(s)
    best, best_p = s, policy.prob(s, a_star)
    for sp in _scan_order(s, neighbors)[1:]:
        p = policy.prob(sp, a_star)
        if p < best_p:
            best, best_p = sp, p
    return best


def _q_lookup(qfun, policy: TabularPolicy) -> Callable[[int, int], float]:
    if callable(qfun):
        return qfun
    return lambda s, a: float(qfun[s][policy.actions[s].index(a)])


def pattanaik_attack(s: int, policy: TabularPolicy, qfun, neighbors: Sequence[int]) -> int:
    """Neighbour whose greedy action has the lowest ``Q(s, .)``.

    ``qfun`` is ``q(s, a)`` or per-state arrays aligned with ``policy.actions``.
    """
    q = _q_lookup(qfun, policy)
    best, best_q = s, q(s, policy.greedy_action(s))
    for sp in _scan_order(s, neighbors)[1:]:
        v = q(s, policy.greedy_action(sp))
        if v < best_q:
            best, best_q = sp, v
    return best


def huang_chi(policy: TabularPolicy, neighbors, epsilon: float = 0.0, norm: str = "l1") -> TabularAttack:
    chi = [huang_attack(s, policy, neighbors[s]) for s in range(policy.n_states)]
    return TabularAttack(np.array(chi), epsilon, norm, "huang")


def pattanaik_chi(policy: TabularPolicy, qfun, neighbors, epsilon: float = 0.0, norm: str = "l1") -> TabularAttack:
    chi = [pattanaik_attack(s, policy, qfun, neighbors[s]) for s in range(policy.n_states)]
    return TabularAttack(np.array(chi), epsilon, norm, "pattanaik")


class TabularChiAttack:
    """Runs a tabular ``chi`` inside a :class:`GridWorldEnv` rollout."""

    def __init__(self, env, attack: TabularAttack):
        self.env = env
        self.attack = attack
        self.name = attack.name
        self.epsilon = attack.epsilon
        self.norm = attack.norm

    def reset(self) -> None:
        pass

    def perturb(self, obs) -> np.ndarray:
        return self.env.state_obs(self.attack(self.env.obs_state(obs)))


# ---------------------------------------------------------------------------
# fast gradient method


def worst_action_loss_grad(agent, obs) -> np.ndarray:
    """``grad_s J`` for ``J = CE(pi(.|s), onehot(argmin pi(.|s)))`` with softmax T=1."""
    p = agent.action_probs(obs)
    y = np.zeros_like(p)
    y[int(np.flatnonzero(p == p.min())[0])] = 1.0
    return agent.logits_input_grad(obs, p - y)


def steepest_direction(g: np.ndarray, norm: str) -> np.ndarray:
    """Unit-norm direction maximising ``<g, d>``; zero for a zero gradient."""
    g = np.asarray(g, dtype=float)
    if not np.any(g):
        return np.zeros_like(g)
    order = norm_order(norm)
    if order == 2:
        return g / np.linalg.norm(g)
    if order == np.inf:
        return np.sign(g)
    d = np.zeros_like(g)
    i = int(np.argmax(np.abs(g)))
    d[i] = np.sign(g[i])
    return d


def fgm_attack(s, agent, epsilon: float, norm: str = "l2") -> np.ndarray:
    """One full-size step down the worst-action cross-entropy."""
    s = np.asarray(s, dtype=float)
    g = worst_action_loss_grad(agent, s)
    return np.clip(s - epsilon * steepest_direction(g, norm), 0.0, 1.0)


@dataclass
class FgmAttack:
    agent: object
    epsilon: float
    norm: str = "l2"
    name: str = "fgm"

    def reset(self) -> None:
        pass

    def perturb(self, obs) -> np.ndarray:
        return fgm_attack(obs, self.agent, self.epsilon, self.norm)


class IdentityAttack:
    name = "none"
    epsilon = 0.0
    norm = "-"

    def reset(self) -> None:
        pass

    def perturb(self, obs) -> np.ndarray:
        return np.asarray(obs, dtype=float)


# ---------------------------------------------------------------------------
# learned adversary


@dataclass
class AttackConfig:
    epsilon: float = 0.05
    norm: str = "l2"
    steps: int = 40_000
    warmup: int = 4_000
    memory: int = 15_000
    gamma: float = 0.99
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    clip: float | None = 1.0
    noise_initial: float = 0.5  # half-width of the uniform exploration noise
    noise_final: float = 1e-3
    noise_steps: int = 28_000
    batch_size: int = 164
    tau: float = 1e-3
    lam: float = 1e-6
    frame_skip: int = 4
    train_random_steps: int = 0
    test_random_steps: int = 10
    exploration: str = "uniform"  # or "gradient"
    p_gradient: float = 0.35
    actor_hidden: tuple[int, ...] = (400, 300)
    critic_hidden: tuple[int, ...] = (400, 300)
    timeout_terminal: bool = False

    def __post_init__(self):
        self.actor_hidden = tuple(int(h) for h in self.actor_hidden)
        self.critic_hidden = tuple(int(h) for h in self.critic_hidden)
        norm_order(self.norm)
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if not 0 < self.gamma < 1:
            raise ValueError("attack gamma must lie in (0, 1)")
        if self.noise_final > self.noise_initial:
            raise ValueError("exploration noise must shrink over training")
        if self.exploration not in ("uniform", "gradient"):
            raise ValueError(f"unknown exploration mode {self.exploration!r}")
        if not 0 <= self.p_gradient <= 1:
            raise ValueError("p_gradient must be a probability")

    def noise_width(self, step: int) -> float:
        if self.noise_steps <= 0:
            return self.noise_final
        frac = min(1.0, step / self.noise_steps)
        return self.noise_initial + frac * (self.noise_final - self.noise_initial)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> AttackConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown attack config keys: {sorted(unknown)}")
        return cls(**d)


def perturb_with(actor: Mlp, s: np.ndarray, epsilon: float, lam: float, norm: str, noise=None) -> np.ndarray:
    x = actor(s)
    if noise is not None:
        x = x + noise
    return np.clip(s + project_ball(x, epsilon, lam, norm_order(norm)), 0.0, 1.0)


def perturb_backward(actor: Mlp, s: np.ndarray, epsilon: float, lam: float, norm: str, grad_sbar: np.ndarray):
    """Parameter gradients of ``<grad_sbar, clamp(s + project(actor(s)))>``."""
    x, cache = actor.forward(s)
    delta = project_ball(x, epsilon, lam, norm_order(norm))
    raw = s + delta
    g = np.where((raw > 0.0) & (raw < 1.0), grad_sbar, 0.0)
    g = project_ball_backward(x, epsilon, g, lam, norm_order(norm))
    return actor.backward(cache, g)[0]


@dataclass
class NeuralAttack:
    """Trained adversary; ``with_epsilon`` re-projects the same actor."""

    actor: Mlp
    critic: Mlp
    epsilon: float
    norm: str
    lam: float = 1e-6
    name: str = "blackbox"
    env_name: str = ""
    config: AttackConfig = field(default_factory=AttackConfig)
    log: list[dict] = field(default_factory=list)

    def reset(self) -> None:
        pass

    def perturb(self, obs) -> np.ndarray:
        return perturb_with(self.actor, np.asarray(obs, dtype=float), self.epsilon, self.lam, self.norm)

    def raw_output(self, obs) -> np.ndarray:
        return self.actor(np.asarray(obs, dtype=float))

    def with_epsilon(self, epsilon: float) -> NeuralAttack:
        if epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        view = copy.copy(self)  # shares actor and critic
        view.epsilon = float(epsilon)
        return view


def sweep_epsilon(attack: NeuralAttack, eps_list: Sequence[float]) -> list[tuple[float, NeuralAttack]]:
    return [(float(e), attack.with_epsilon(e)) for e in eps_list]


class AttackEnvironment:
    """The adversary's view of the world: it picks ``s_bar`` and gets back the
    adversarial reward and next state. The agent stays hidden inside."""

    def __init__(self, env: Env, agent, reward_fn: Callable[[float], float] = lambda r: -r, random_steps: int = 0):
        self._env = env
        self._agent = agent
        self._reward_fn = reward_fn
        self._random_steps = random_steps
        self._rng = None
        self.state_dim = env.state_dim
        self.env_name = env.name

    def reset(self, rng: np.random.Generator | None = None) -> np.ndarray:
        if rng is not None:
            self._rng = rng
        self._env.reset(rng=self._rng)
        self._agent.reset()
        return self._env.random_start(self._env.rng, self._random_steps)

    @property
    def done(self) -> bool:
        return self._env.done

    def step(self, s_bar):
        st = self._env.step(self._agent.act(s_bar))
        return self._reward_fn(st.reward), st.reward, st.observation, st.done, st.truncated


def gradient_exploration(e: np.ndarray, agent, s: np.ndarray, x_flag: bool) -> np.ndarray:
    """Mix uniform noise with the unit direction that favours the agent's worst action."""
    if not x_flag:
        return e
    p = agent.action_probs(s)
    omega = float(p.max() - p.min())
    if omega == 0.0:
        return e
    d = -worst_action_loss_grad(agent, s)
    n = np.linalg.norm(d)
    if n == 0.0:
        return e
    return (1.0 - omega) * e + omega * d / n


def exploration_noise(mode: str, s, agent, t: int, config: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform noise from the annealed range, optionally steered by the agent's gradient."""
    w = config.noise_width(t)
    e = rng.uniform(-w, w, size=np.shape(s))
    if mode == "uniform":
        return e
    if mode != "gradient":
        raise ValueError(f"unknown exploration mode {mode!r}")
    return gradient_exploration(e, agent, np.asarray(s, dtype=float), bool(rng.random() < config.p_gradient))


def _check(loss: float, step: int) -> None:
    if not np.isfinite(loss) or loss > LOSS_LIMIT:
        raise TrainingDivergedError(f"attack critic loss {loss:.3e} at step {step} (limit {LOSS_LIMIT:.0e})")


def _build_nets(state_dim: int, critic_in: int, config: AttackConfig, seed: int, tag: str):
    rng = substream(seed, f"{tag}-init")
    actor = Mlp.build((state_dim, *config.actor_hidden, state_dim), ["relu"] * len(config.actor_hidden) + ["linear"], rng)
    critic = Mlp.build((critic_in, *config.critic_hidden, 1), ["relu"] * len(config.critic_hidden) + ["linear"], rng)
    return actor, critic


def blackbox_update(actor, critic, actor_t, critic_t, opt_a, opt_c, batch, config: AttackConfig, step: int) -> float:
    """One critic and one actor step on a replay batch ``(s, s_bar, r_bar, s', terminal)``."""
    s, sb, r, s2, term = batch
    eps, lam, norm = config.epsilon, config.lam, config.norm
    sb2 = perturb_with(actor_t, s2, eps, lam, norm)
    q_next = critic_t(np.concatenate([s2, sb2], axis=1))[:, 0]
    y = r + config.gamma * (~term) * q_next
    q, cache = critic.forward(np.concatenate([s, sb], axis=1))
    err = q[:, 0] - y
    loss = float(np.mean(err**2))
    _check(loss, step)
    grads, _ = critic.backward(cache, (2.0 * err / len(err))[:, None])
    opt_c.step(grads)

    # actor ascends Q(s, chi(s))
    sb_pi = perturb_with(actor, s, eps, lam, norm)
    gin = critic.input_grad(np.concatenate([s, sb_pi], axis=1), np.full((len(s), 1), -1.0 / len(s)))
    opt_a.step(perturb_backward(actor, s, eps, lam, norm, gin[:, s.shape[1]:]))
    soft_update(critic_t, critic, config.tau)
    soft_update(actor_t, actor, config.tau)
    return loss


def _episode_log(log, episode, step, ret, length):
    log.append({"episode": episode, "step": step, "return": ret, "length": length})


def train_attack_blackbox(env: Env, agent, config: AttackConfig, seed: int) -> NeuralAttack:
    """DDPG over the adversary's MDP, seeing only ``(s, r_bar, s')``."""
    if config.exploration != "uniform":
        raise ValueError("the black-box attack cannot use gradient exploration")
    world = AttackEnvironment(env, agent, random_steps=config.train_random_steps)
    return _train_blackbox(world, config, seed)


def _train_blackbox(world: AttackEnvironment, config: AttackConfig, seed: int) -> NeuralAttack:
    d = world.state_dim
    actor, critic = _build_nets(d, 2 * d, config, seed, "blackbox")
    actor_t, critic_t = actor.copy(), critic.copy()
    opt_a = Adam(actor.params(), lr=config.lr_actor, clip_norm=config.clip)
    opt_c = Adam(critic.params(), lr=config.lr_critic, clip_norm=config.clip)
    buf = ReplayBuffer(config.memory, d, d, substream(seed, "blackbox-replay"))
    rng = substream(seed, "blackbox-noise")
    attack = NeuralAttack(actor, critic, config.epsilon, config.norm, config.lam, "blackbox", world.env_name, config)

    s = world.reset(substream(seed, "blackbox-env"))
    ep_ret, ep_len, episode = 0.0, 0, 0
    for step in range(config.steps):
        e = exploration_noise("uniform", s, None, step, config, rng)
        sb = perturb_with(actor, s, config.epsilon, config.lam, config.norm, e)
        r_bar, r, s2, done, trunc = world.step(sb)
        buf.add(s, sb, r_bar, s2, done and (config.timeout_terminal or not trunc))
        ep_ret += r
        ep_len += 1
        s = s2
        if done:
            _episode_log(attack.log, episode, step + 1, ep_ret, ep_len)
            episode += 1
            ep_ret, ep_len = 0.0, 0
            s = world.reset()
        if step >= config.warmup and len(buf) >= config.batch_size:
            blackbox_update(actor, critic, actor_t, critic_t, opt_a, opt_c, buf.sample(config.batch_size), config, step)
    return attack


def whitebox_critic_target(critic_t: Mlp, actor_t: Mlp, agent, r_bar, s2, term, config: AttackConfig) -> np.ndarray:
    """``y = r_bar - gamma * Q'(s', pi(chi'(s')))``."""
    sb2 = perturb_with(actor_t, s2, config.epsilon, config.lam, config.norm)
    a2 = agent.action_vector(sb2)
    q_next = critic_t(np.concatenate([s2, a2], axis=1))[:, 0]
    return r_bar - config.gamma * (~term) * q_next


def whitebox_actor_grads(actor: Mlp, critic: Mlp, agent, s: np.ndarray, config: AttackConfig) -> list[np.ndarray]:
    """Gradient of ``mean Q(s, pi(chi(s)))`` w.r.t. the actor, chained through the agent.

    Descending it lowers the agent's value, which is the adversary's goal.
    """
    eps, lam, norm = config.epsilon, config.lam, config.norm
    sb = perturb_with(actor, s, eps, lam, norm)
    a = agent.action_vector(sb)
    gin = critic.input_grad(np.concatenate([s, a], axis=1), np.full((len(s), 1), 1.0 / len(s)))
    g_sb = agent.action_vector_vjp(sb, gin[:, s.shape[1]:])
    return perturb_backward(actor, s, eps, lam, norm, g_sb)


def whitebox_update(actor, critic, actor_t, critic_t, opt_a, opt_c, agent, batch, config: AttackConfig, step: int) -> float:
    s, a, r_bar, s2, term = batch
    y = whitebox_critic_target(critic_t, actor_t, agent, r_bar, s2, term, config)
    q, cache = critic.forward(np.concatenate([s, a], axis=1))
    err = y + q[:, 0]
    loss = float(np.mean(err**2))
    _check(loss, step)
    grads, _ = critic.backward(cache, (2.0 * err / len(err))[:, None])
    opt_c.step(grads)
    opt_a.step(whitebox_actor_grads(actor, critic, agent, s, config))
    soft_update(critic_t, critic, config.tau)
    soft_update(actor_t, actor, config.tau)
    return loss


def train_attack_whitebox(env: Env, agent, config: AttackConfig, seed: int) -> NeuralAttack:
    """Adversary that differentiates through the agent's policy network.

    The critic learns the agent's value under attack over agent actions; the
    replay stores the agent's action distribution at ``s_bar``.
    """
    d = env.state_dim
    k = agent.action_vector_dim
    actor, critic = _build_nets(d, d + k, config, seed, "whitebox")
    actor_t, critic_t = actor.copy(), critic.copy()
    opt_a = Adam(actor.params(), lr=config.lr_actor, clip_norm=config.clip)
    opt_c = Adam(critic.params(), lr=config.lr_critic, clip_norm=config.clip)
    buf = ReplayBuffer(config.memory, d, k, substream(seed, "whitebox-replay"))
    rng = substream(seed, "whitebox-noise")
    attack = NeuralAttack(actor, critic, config.epsilon, config.norm, config.lam, "whitebox", env.name, config)

    s = env.reset(rng=substream(seed, "whitebox-env"))
    agent.reset()
    ep_ret, ep_len, episode = 0.0, 0, 0
    for step in range(config.steps):
        e = exploration_noise(config.exploration, s, agent, step, config, rng)
        sb = perturb_with(actor, s, config.epsilon, config.lam, config.norm, e)
        a_vec = agent.action_vector(sb)
        st = env.step(agent.act(sb))
        buf.add(s, a_vec, -st.reward, st.observation, st.done and (config.timeout_terminal or not st.truncated))
        ep_ret += st.reward
        ep_len += 1
        s = st.observation
        if st.done:
            _episode_log(attack.log, episode, step + 1, ep_ret, ep_len)
            episode += 1
            ep_ret, ep_len = 0.0, 0
            s = env.reset()
            agent.reset()
        if step >= config.warmup and len(buf) >= config.batch_size:
            whitebox_update(actor, critic, actor_t, critic_t, opt_a, opt_c, agent, buf.sample(config.batch_size), config, step)
    return attack


ATTACK_TRAINERS = {"blackbox": train_attack_blackbox, "whitebox": train_attack_whitebox}


# ---------------------------------------------------------------------------
# persistence


def save_attack(attack: NeuralAttack, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    meta = {"algo": attack.name, "env": attack.env_name, "epsilon": attack.epsilon, "norm": attack.norm,
            "lam": attack.lam, "config": attack.config.to_dict()}
    with open(os.path.join(directory, "attack.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    for name, net in (("actor.net", attack.actor), ("critic.net", attack.critic)):
        with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
            fh.write(dump_net(net))
    with open(os.path.join(directory, "train_log.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "step", "return", "length"])
        for row in attack.log:
            w.writerow([row["episode"], row["step"], repr(float(row["return"])), row["length"]])


def load_attack(directory: str) -> NeuralAttack:
    path = os.path.join(directory, "attack.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no trained attack in {directory!r}")
    with open(path, encoding="utf-8") as fh:
        meta = json.load(fh)
    nets = []
    for name in ("actor.net", "critic.net"):
        with open(os.path.join(directory, name), encoding="utf-8") as fh:
            nets.append(load_net(fh.read()))
    log = []
    log_path = os.path.join(directory, "train_log.csv")
    if os.path.exists(log_path):
        with open(log_path, encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                log.append({"episode": int(row["episode"]), "step": int(row["step"]),
                            "return": float(row["return"]), "length": int(row["length"])})
    return NeuralAttack(nets[0], nets[1], meta["epsilon"], meta["norm"], meta["lam"], meta["algo"], meta["env"],
                        AttackConfig.from_dict(meta["config"]), log)
