import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optattack.agents import AgentConfig, DqnAgent
from optattack.attack_mdp import attacked_values, build_attack_mdp, distance_matrix, neighbor_sets, solve_optimal_attack
from optattack.attacks import (AttackConfig, AttackEnvironment, FgmAttack, NeuralAttack, TabularChiAttack,
                               _train_blackbox, exploration_noise, fgm_attack, gradient_exploration, huang_attack,
                               huang_chi, load_attack, pattanaik_attack, pattanaik_chi, save_attack, sweep_epsilon,
                               train_attack_blackbox, train_attack_whitebox)
from optattack.envs import Env, GridWorldEnv, MountainCar, grid_coords, make_gridworld
from optattack.mdp import TabularMdp, TabularPolicy, q_from_policy, value_iteration
from optattack.neural import Mlp, project_ball
from optattack.seeding import substream

SMALL = dict(actor_hidden=(8,), critic_hidden=(16, 16))


def grid(eps=1):
    m = make_gridworld(6, 6)
    v, pi = value_iteration(m)
    nb = neighbor_sets(distance_matrix(grid_coords(6, 6), "l1"), eps)
    return m, v, pi, nb


def linear_agent(W, b, env_name="mountaincar"):
    W, b = np.atleast_2d(np.asarray(W, dtype=float)), np.asarray(b, dtype=float)
    net = Mlp.build((W.shape[0], W.shape[1]), ["linear"], np.random.default_rng(0))
    net.layers[0].W[:] = W
    net.layers[0].b[:] = b
    return DqnAgent(net, env_name, AgentConfig())


def _enumerated_choice(s, nb, score):
    # smallest score; on ties the true state, then the lowest id
    return min(nb, key=lambda t: (score(t), t != s, t))


class TestTabularBaselines:
    def test_huang_matches_enumeration(self):
        m, v, pi, nb = grid()
        for s in range(36):
            a_star = pi.greedy_action(s)
            assert huang_attack(s, pi, nb[s]) == _enumerated_choice(s, nb[s], lambda t: pi.prob(t, a_star))

    def test_pattanaik_matches_enumeration(self):
        m, v, pi, nb = grid()
        q = q_from_policy(m, pi, v)
        for s in range(36):
            expect = _enumerated_choice(s, nb[s], lambda t: q[s][pi.greedy_action(t)])
            assert pattanaik_attack(s, pi, q, nb[s]) == expect

    def test_zero_radius(self):
        m, v, pi, nb = grid(eps=0)
        q = q_from_policy(m, pi, v)
        np.testing.assert_array_equal(huang_chi(pi, nb).chi, np.arange(36))
        np.testing.assert_array_equal(pattanaik_chi(pi, q, nb).chi, np.arange(36))

    def test_identical_policy_keeps_true_state(self):
        pi = TabularPolicy.uniform([(0, 1)] * 4)
        assert huang_attack(2, pi, [0, 1, 2, 3]) == 2

    def test_pattanaik_picks_the_flipping_neighbour(self):
        # state 0: action 0 good, action 1 bad; state 1 prefers action 1
        trans = {(s, a): ((2, 1.0),) for s in (0, 1) for a in (0, 1)}
        trans[2, 0] = trans[2, 1] = ((2, 1.0),)
        reward = {(0, 0): 1.0, (0, 1): -1.0, (1, 0): 0.0, (1, 1): 0.0, (2, 0): 0.0, (2, 1): 0.0}
        m = TabularMdp(3, ((0, 1),) * 3, trans, reward, np.array([1.0, 0, 0]), 0.9, frozenset({2}))
        pi = TabularPolicy.deterministic(m.actions, [0, 1, 0])
        q = [np.array([1.0, -1.0]), np.zeros(2), np.zeros(2)]
        assert pattanaik_attack(0, pi, q, [0, 1]) == 1

    def test_pattanaik_is_weaker_than_optimal_somewhere(self):
        m, v, pi, nb = grid()
        opt = attacked_values(m, pi, solve_optimal_attack(build_attack_mdp(m, pi, nb)))
        pat = attacked_values(m, pi, pattanaik_chi(pi, q_from_policy(m, pi, v), nb))
        assert np.all(opt <= pat)
        assert np.any(opt < pat)

    def test_chi_inside_env(self):
        m, v, pi, nb = grid()
        chi = huang_chi(pi, nb, 1.0)
        env = GridWorldEnv(6, 6)
        att = TabularChiAttack(env, chi)
        for s in range(36):
            assert env.obs_state(att.perturb(env.state_obs(s))) == chi(s)


class TestFgm:
    def test_linear_policy_by_hand(self):
        # logits = [x, -x]; at x = 0.5 the least likely action is 1 and
        # dJ/dx = p0 + (1 - p1) > 0, so the step goes down by epsilon
        agent = linear_agent([[1.0, -1.0]], [0.0, 0.0])
        np.testing.assert_allclose(fgm_attack(np.array([0.5]), agent, 0.05, "l2"), [0.45])
        np.testing.assert_allclose(fgm_attack(np.array([0.5]), agent, 0.05, "linf"), [0.45])

    def test_zero_gradient_returns_state(self):
        agent = linear_agent([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]], [0.0, 0.0, 0.0])
        s = np.array([0.3, 0.6])
        np.testing.assert_array_equal(fgm_attack(s, agent, 0.1), s)

    def test_l2_direction_by_hand(self):
        agent = linear_agent([[1.0, 0.0], [0.0, 2.0]], [0.0, 0.0])
        s = np.array([0.5, 0.5])
        # logits (0.5, 1.0): argmin is action 0; grad = (p - e0) @ W.T = (p0 - 1, 2 p1)
        p = np.exp([0.5, 1.0]) / np.exp([0.5, 1.0]).sum()
        g = np.array([p[0] - 1.0, 2.0 * p[1]])
        np.testing.assert_allclose(fgm_attack(s, agent, 0.1, "l2"), s - 0.1 * g / np.linalg.norm(g))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0, 0.2), st.sampled_from(["l1", "l2", "linf"]))
    def test_stays_in_ball_and_box(self, seed, eps, norm):
        rng = np.random.default_rng(seed)
        agent = DqnAgent(Mlp.build((2, 6, 3), ["relu", "linear"], rng), "mountaincar", AgentConfig())
        s = rng.uniform(size=2)
        sb = FgmAttack(agent, eps, norm).perturb(s)
        order = {"l1": 1, "l2": 2, "linf": np.inf}[norm]
        assert np.linalg.norm(sb - s, ord=order) <= eps + 1e-9
        assert np.all((sb >= 0) & (sb <= 1))


class FixedProbs:
    """Agent stub with fixed action probabilities and input gradient."""

    def __init__(self, p, grad):
        self.p, self.grad = np.asarray(p, dtype=float), np.asarray(grad, dtype=float)

    def action_probs(self, obs):
        return self.p

    def logits_input_grad(self, obs, g):
        return self.grad * float(np.sum(g * np.arange(1, len(g) + 1)))


class TestExploration:
    def test_schedule(self):
        cfg = AttackConfig()
        assert cfg.noise_width(0) == 0.5
        assert cfg.noise_width(28_000) == pytest.approx(1e-3)
        assert cfg.noise_width(10**6) == pytest.approx(1e-3)
        assert cfg.noise_width(14_000) == pytest.approx((0.5 + 1e-3) / 2)

    def test_uniform_range(self):
        cfg = AttackConfig()
        rng = np.random.default_rng(0)
        e = np.array([exploration_noise("uniform", np.zeros(2), None, 0, cfg, rng) for _ in range(2000)])
        assert np.abs(e).max() <= 0.5 and np.abs(e).max() > 0.45

    def test_flag_off_keeps_noise(self):
        e = np.array([0.1, -0.2])
        np.testing.assert_array_equal(gradient_exploration(e, FixedProbs([1.0, 0.0], [1.0, 1.0]), np.zeros(2), False), e)

    def test_uniform_policy_keeps_noise(self):
        e = np.array([0.1, -0.2])
        np.testing.assert_array_equal(gradient_exploration(e, FixedProbs([0.5, 0.5], [1.0, 1.0]), np.zeros(2), True), e)

    def test_certain_policy_uses_gradient_direction(self):
        e = np.array([0.1, -0.2])
        agent = FixedProbs([1.0, 0.0], [3.0, -4.0])
        # p - onehot(argmin) = (1, -1); stub gradient = (3, -4) * (1 - 2) = (-3, 4); minus that, normalised
        np.testing.assert_allclose(gradient_exploration(e, agent, np.zeros(2), True), [0.6, -0.8])

    def test_mixing_weight(self):
        e = np.array([0.1, -0.2])
        agent = FixedProbs([0.7, 0.3], [3.0, -4.0])
        out = gradient_exploration(e, agent, np.zeros(2), True)
        # p - onehot(1) = (0.7, -0.7): stub gives (3, -4) * (0.7 - 1.4) = (-2.1, 2.8); -grad is (0.6, -0.8) direction
        np.testing.assert_allclose(out, 0.6 * e + 0.4 * np.array([0.6, -0.8]))

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            exploration_noise("brownian", np.zeros(2), None, 0, AttackConfig(), np.random.default_rng(0))


class TestConfig:
    def test_defaults(self):
        c = AttackConfig()
        assert (c.steps, c.warmup, c.memory, c.batch_size) == (40_000, 4_000, 15_000, 164)
        assert (c.lr_actor, c.lr_critic, c.tau, c.lam, c.gamma) == (1e-4, 1e-3, 1e-3, 1e-6, 0.99)

    @pytest.mark.parametrize("bad", [dict(epsilon=-1.0), dict(noise_final=1.0), dict(exploration="x"), dict(norm="l7")])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            AttackConfig(**bad)

    def test_round_trip(self):
        c = AttackConfig(epsilon=0.1, actor_hidden=(4, 4))
        assert AttackConfig.from_dict(c.to_dict()) == c


def random_attack(seed=0, eps=0.05):
    rng = np.random.default_rng(seed)
    actor = Mlp.build((2, 8, 2), ["relu", "linear"], rng)
    actor.layers[-1].W *= 50  # raw outputs well outside the ball
    critic = Mlp.build((4, 8, 1), ["relu", "linear"], rng)
    return NeuralAttack(actor, critic, eps, "l2", env_name="mountaincar")


class TestSweep:
    def test_same_epsilon_identical(self):
        a = random_attack()
        s = np.array([0.4, 0.6])
        (eps, view), = sweep_epsilon(a, [0.05])
        np.testing.assert_array_equal(view.perturb(s), a.perturb(s))
        assert view.actor is a.actor

    def test_zero_view_is_identity(self):
        a = random_attack()
        s = np.array([0.4, 0.6])
        np.testing.assert_array_equal(a.with_epsilon(0.0).perturb(s), s)

    def test_doubling(self):
        a = random_attack()
        rng = np.random.default_rng(1)
        for s in rng.uniform(0.3, 0.7, size=(20, 2)):
            raw = np.linalg.norm(a.raw_output(s))
            d1 = np.linalg.norm(a.perturb(s) - s)
            d2 = np.linalg.norm(a.with_epsilon(0.1).perturb(s) - s)
            assert d2 <= 0.1 + 1e-12
            if raw > 0.1:
                assert d2 >= d1
        assert a.epsilon == 0.05

    def test_negative(self):
        with pytest.raises(ValueError):
            random_attack().with_epsilon(-0.1)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.3))
    def test_emitted_perturbation_within_radius(self, x, y, eps):
        a = random_attack().with_epsilon(eps)
        s = np.array([x, y])
        sb = a.perturb(s)
        assert np.linalg.norm(sb - s) <= eps + 1e-9
        assert np.all((sb >= 0) & (sb <= 1))


def test_perturb_is_projection_plus_state():
    a = random_attack()
    s = np.array([0.5, 0.5])
    np.testing.assert_allclose(a.perturb(s), np.clip(s + project_ball(a.raw_output(s), 0.05), 0, 1))


def mc_agent(seed=0):
    rng = np.random.default_rng(seed)
    return DqnAgent(Mlp.build((2, 16, 3), ["relu", "linear"], rng), "mountaincar", AgentConfig())


def test_zero_radius_training_leaves_returns_unchanged():
    agent = mc_agent()
    cfg = AttackConfig(epsilon=0.0, steps=300, warmup=50, batch_size=16, **SMALL)
    attack = train_attack_blackbox(MountainCar(), agent, cfg, seed=4)
    env = MountainCar()
    env.reset(rng=substream(4, "blackbox-env"))
    clean = []
    for row in attack.log:
        ret = 0.0
        while not env.done:
            ret += env.step(agent.act(env.observe())).reward
        clean.append(ret)
        env.reset()
    assert len(attack.log) >= 1
    assert [r["return"] for r in attack.log] == clean


class RecordingWorld:
    """Opaque adversary world: no agent anywhere, just states and rewards."""

    state_dim = 2
    env_name = "toy"

    def __init__(self):
        self.seen = []
        self.t = 0
        self.done = False

    def reset(self, rng=None):
        self.t = 0
        return np.array([0.5, 0.5])

    def step(self, s_bar):
        self.seen.append(np.array(s_bar))
        self.t += 1
        done = self.t >= 10
        return 1.0, -1.0, np.array([0.5, 0.5]) + 0.01 * self.t, done, False


def test_blackbox_needs_only_states_and_rewards():
    world = RecordingWorld()
    cfg = AttackConfig(epsilon=0.05, steps=120, warmup=20, batch_size=8, **SMALL)
    attack = _train_blackbox(world, cfg, seed=0)
    assert len(world.seen) == 120 and len(attack.log) == 12


def test_attack_environment_hides_the_agent():
    world = AttackEnvironment(MountainCar(), mc_agent())
    public = {n for n in vars(world) if not n.startswith("_")}
    assert public == {"state_dim", "env_name"}


def test_blackbox_emits_feasible_perturbations():
    world = RecordingWorld()
    cfg = AttackConfig(epsilon=0.03, steps=200, warmup=20, batch_size=8, **SMALL)
    _train_blackbox(world, cfg, seed=1)
    base = [np.array([0.5, 0.5])] + [np.array([0.5, 0.5]) + 0.01 * t for t in range(1, 10)]
    for i, sb in enumerate(world.seen):
        assert np.linalg.norm(sb - base[i % 10]) <= 0.03 + 1e-9


def test_blackbox_rejects_gradient_exploration():
    with pytest.raises(ValueError):
        train_attack_blackbox(MountainCar(), mc_agent(), AttackConfig(exploration="gradient", steps=1), 0)


class Chain(Env):
    """Positions 0..4 on a line, goal at 4, -1 per step."""

    name = "chain"
    state_dim = 1
    n_actions = 2
    obs_low = np.array([0.0])
    obs_high = np.array([4.0])
    max_frames = 50
    reward_floor = -50.0

    def _initial_state(self):
        return np.array([float(self.rng.integers(4))])

    def _frame(self, state, action):
        pos = min(4.0, max(0.0, state[0] + (1.0 if int(action) == 1 else -1.0)))
        return np.array([pos]), -1.0, pos == 4.0


def test_whitebox_critic_learns_agent_value():
    gamma = 0.9
    agent = linear_agent([[0.0, 0.0]], [0.0, 5.0], env_name="chain")  # always right
    cfg = AttackConfig(epsilon=0.1, steps=6000, warmup=200, batch_size=32, gamma=gamma, tau=0.01,
                       lr_critic=1e-3, exploration="gradient", actor_hidden=(8,), critic_hidden=(32, 32))
    attack = train_attack_whitebox(Chain(frame_skip=1), agent, cfg, seed=0)
    for pos in range(4):
        s = np.array([pos / 4.0])
        a = agent.action_vector(attack.perturb(s))
        q = attack.critic(np.concatenate([s, a]))[0]
        k = 4 - pos
        exact = -(1 - gamma**k) / (1 - gamma)  # the agent's own value under attack
        assert abs(q - exact) < 0.1, (pos, q, exact)


def test_save_load_round_trip(tmp_path):
    a = random_attack()
    a.log.append({"episode": 0, "step": 10, "return": -40.0, "length": 10})
    save_attack(a, str(tmp_path / "att"))
    b = load_attack(str(tmp_path / "att"))
    s = np.array([0.2, 0.9])
    np.testing.assert_array_equal(a.perturb(s), b.perturb(s))
    assert b.epsilon == a.epsilon and b.norm == a.norm and b.log == a.log


def test_load_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_attack(str(tmp_path))
