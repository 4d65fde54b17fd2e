import numpy as np
import pytest

from optattack.envs import (DOWN, LEFT, RIGHT, UP, CartPole, ContinuousMountainCar, EpisodeDoneError, GridWorldEnv,
                            MountainCar, make_env, make_gridworld)


class TestGridworld:
    def test_layout(self):
        m = make_gridworld(6, 6)
        assert m.n_states == 36 and m.gamma == 1.0
        assert m.terminal == {0, 35}
        assert all(m.actions[s] == (0, 1, 2, 3) for s in range(36))

    def test_moves(self):
        m = make_gridworld(6, 6)
        s = 2 * 6 + 3
        assert m.transition[s, UP] == ((9, 1.0),)
        assert m.transition[s, RIGHT] == ((s + 1, 1.0),)
        assert m.transition[s, DOWN] == ((s + 6, 1.0),)
        assert m.transition[s, LEFT] == ((s - 1, 1.0),)

    def test_off_grid_move_stays(self):
        m = make_gridworld(6, 6)
        assert m.transition[5, UP] == ((5, 1.0),)
        assert m.transition[6, LEFT] == ((6, 1.0),)

    def test_terminal_self_loop(self):
        m = make_gridworld(6, 6)
        for a in range(4):
            assert m.transition[0, a] == ((0, 1.0),) and m.reward[0, a] == 0.0

    def test_step_cost(self):
        m = make_gridworld(6, 6)
        assert m.reward[7, UP] == -1.0

    def test_too_small(self):
        with pytest.raises(ValueError):
            make_gridworld(1, 5)

    def test_env_walks_to_goal(self):
        env = GridWorldEnv(3, 3)
        obs = env.reset_to(4)
        assert env.obs_state(obs) == 4
        st = env.step(UP)
        assert env.obs_state(st.observation) == 1 and st.reward == -1.0 and not st.done
        st = env.step(LEFT)
        assert st.done and not st.truncated
        np.testing.assert_allclose(st.observation, [0.0, 0.0])

    def test_state_obs_round_trip(self):
        env = GridWorldEnv(6, 6)
        for s in range(36):
            assert env.obs_state(env.state_obs(s)) == s

    def test_floor(self):
        assert GridWorldEnv(6, 6).reward_floor == -24.0


class TestMountainCar:
    def test_one_frame_by_hand(self):
        env = MountainCar(frame_skip=1)
        env.reset(seed=0)
        env.state = np.array([-0.5, 0.0])
        env.step(2)
        # v = 0.001 - 0.0025 cos(-1.5); cos(-1.5) = 0.0707372016677029
        v = 0.001 - 0.0025 * 0.0707372016677029
        np.testing.assert_allclose(env.state, [-0.5 + v, v], atol=1e-15)

    def test_frame_skip_sums_rewards(self):
        env = MountainCar(frame_skip=4)
        env.reset(seed=1)
        st = env.step(1)
        assert st.reward == -4.0 and st.frames == 4 and env.frames == 4

    def test_cap_truncates_at_200_frames(self):
        env = MountainCar(frame_skip=4)
        env.reset(seed=2)
        total, n = 0.0, 0
        while not env.done:
            st = env.step(1)
            total += st.reward
            n += 1
        assert st.truncated and total == -200.0 and n == 50

    def test_step_after_done(self):
        env = MountainCar()
        env.reset(seed=0)
        while not env.done:
            env.step(1)
        with pytest.raises(EpisodeDoneError):
            env.step(1)

    def test_reaching_goal_terminates(self):
        env = MountainCar(frame_skip=1)
        env.reset(seed=0)
        env.state = np.array([0.499, 0.07])
        st = env.step(2)
        assert st.done and not st.truncated

    def test_left_wall_zeroes_velocity(self):
        env = MountainCar(frame_skip=1)
        env.reset(seed=0)
        env.state = np.array([-1.19, -0.07])
        env.step(0)
        assert env.state[0] == -1.2 and env.state[1] == 0.0

    def test_seeded_start(self):
        a = MountainCar().reset(seed=7)
        b = MountainCar().reset(seed=7)
        np.testing.assert_array_equal(a, b)
        raw = MountainCar().denormalize(a)
        assert -0.6 <= raw[0] <= -0.4 and raw[1] == 0.0

    def test_observation_normalised(self):
        env = MountainCar()
        obs = env.reset(seed=3)
        rng = np.random.default_rng(0)
        while not env.done:
            assert np.all((0 <= obs) & (obs <= 1))
            obs = env.step(int(rng.integers(3))).observation

    def test_invalid_action(self):
        env = MountainCar()
        env.reset(seed=0)
        with pytest.raises(ValueError):
            env.step(3)


def test_random_start_plays_single_frames():
    env = MountainCar(frame_skip=4)
    env.reset(seed=0)
    rng = np.random.default_rng(5)
    k = int(np.random.default_rng(5).integers(10))
    env.random_start(rng, 10)
    assert env.frames == k and not env.done
    env.reset(seed=0)
    np.testing.assert_array_equal(env.random_start(rng, 0), env.observe())
    assert env.frames == 0


def test_continuous_mountaincar_goal_bonus():
    env = ContinuousMountainCar(frame_skip=1)
    env.reset(seed=0)
    env.state = np.array([0.449, 0.05])
    st = env.step(np.array([1.0]))
    assert st.done and st.reward == pytest.approx(100.0 - 0.1)


def test_cartpole_balanced_start_survives_a_step():
    env = CartPole(frame_skip=1)
    env.reset(seed=0)
    st = env.step(1)
    assert st.reward == 1.0 and not st.done


def test_cartpole_fails_on_angle():
    env = CartPole(frame_skip=1)
    env.reset(seed=0)
    env.state = np.array([0.0, 0.0, 0.25, 0.0])
    assert env.step(0).done


def test_make_env():
    assert make_env("mountaincar").frame_skip == 4
    assert make_env("gridworld").frame_skip == 1
    with pytest.raises(ValueError, match="unknown environment"):
        make_env("pong")
