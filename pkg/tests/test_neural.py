import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from optattack.neural import (Adam, Mlp, RecurrentNet, dump_net, hard_update, load_net, project_ball, soft_update,
                              softmax_temp)

import gradchecks


@pytest.mark.parametrize("name", sorted(gradchecks.CHECKS))
@pytest.mark.parametrize("seed", range(3))
def test_backward_matches_finite_differences(name, seed):
    assert gradchecks.CHECKS[name](seed) <= 1e-4


def test_forward_by_hand():
    net = Mlp.build((2, 2, 1), ["relu", "linear"], np.random.default_rng(0))
    net.layers[0].W[:] = [[1.0, -1.0], [2.0, 0.5]]
    net.layers[0].b[:] = [0.0, -1.0]
    net.layers[1].W[:] = [[3.0], [4.0]]
    net.layers[1].b[:] = [0.5]
    # hidden = relu([1 + 4, -1 + 1 - 1]) = [5, 0]; out = 15.5
    assert net(np.array([1.0, 2.0]))[0] == 15.5


def test_batch_and_single_agree():
    net = Mlp.build((3, 4, 2), ["tanh", "linear"], np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=(5, 3))
    np.testing.assert_allclose(net(x)[2], net(x[2]))


def test_input_dim_checked():
    net = Mlp.build((3, 2), ["linear"], np.random.default_rng(0))
    with pytest.raises(ValueError):
        net(np.zeros(4))


def test_init_range():
    net = Mlp.build((16, 8), ["linear"], np.random.default_rng(0))
    assert np.abs(net.layers[0].W).max() <= 0.25


class TestAdam:
    def test_first_step_by_hand(self):
        p = np.array([1.0, -2.0])
        opt = Adam([p], lr=0.1)
        opt.step([np.array([0.5, -4.0])])
        # bias-corrected m / sqrt(v) = sign(g) on the first step
        np.testing.assert_allclose(p, [1.0 - 0.1 * 0.5 / (0.5 + 1e-8), -2.0 + 0.1 * 4.0 / (4.0 + 1e-8)])

    def test_second_step_by_hand(self):
        p = np.array([0.0])
        opt = Adam([p], lr=1.0, beta1=0.5, beta2=0.5, eps=0.0)
        opt.step([np.array([1.0])])
        opt.step([np.array([3.0])])
        m = (0.5 * 0.5 * 1.0 + 0.5 * 3.0) / (1 - 0.25)
        v = (0.5 * 0.5 * 1.0 + 0.5 * 9.0) / (1 - 0.25)
        np.testing.assert_allclose(p, [-1.0 - m / np.sqrt(v)])

    def test_global_norm_clipping(self):
        p = np.zeros(2)
        opt = Adam([p], lr=1.0, beta1=0.0, beta2=0.0, eps=0.0, clip_norm=1.0)
        opt.step([np.array([3.0, 4.0])])
        # clipped to (0.6, 0.8); with beta=0 the step is g / |g| per element
        np.testing.assert_allclose(p, [-1.0, -1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Adam([np.zeros(2)]).step([np.zeros(3)])


def test_soft_and_hard_update():
    rng = np.random.default_rng(0)
    a = Mlp.build((2, 3, 1), ["relu", "linear"], rng)
    b = Mlp.build((2, 3, 1), ["relu", "linear"], rng)
    before = [p.copy() for p in a.params()]
    soft_update(a, b, 0.25)
    for pa, p0, pb in zip(a.params(), before, b.params()):
        np.testing.assert_allclose(pa, 0.75 * p0 + 0.25 * pb)
    hard_update(a, b)
    for pa, pb in zip(a.params(), b.params()):
        np.testing.assert_array_equal(pa, pb)


def test_copy_is_independent():
    net = Mlp.build((2, 2), ["linear"], np.random.default_rng(0))
    c = net.copy()
    c.layers[0].W += 1.0
    assert not np.allclose(c.layers[0].W, net.layers[0].W)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-100, 100)), st.floats(0, 5), st.sampled_from([1, 2, np.inf]))
def test_projection_stays_in_ball(x, eps, order):
    y = project_ball(x, eps, 1e-6, order)
    assert np.linalg.norm(y, ord=order) <= eps + 1e-9
    # inside the ball (with the lambda margin) nothing changes
    if np.linalg.norm(x, ord=order) + 1e-6 <= eps:
        np.testing.assert_array_equal(y, x)


def test_projection_by_hand():
    np.testing.assert_allclose(project_ball(np.array([3.0, 4.0]), 1.0, 0.0), [0.6, 0.8])
    np.testing.assert_array_equal(project_ball(np.array([3.0, 4.0]), 0.0), [0.0, 0.0])


def test_projection_rejects_negative_radius():
    with pytest.raises(ValueError):
        project_ball(np.ones(2), -1.0)


def test_softmax_temperature():
    p = softmax_temp(np.array([0.0, np.log(3.0)]))
    np.testing.assert_allclose(p, [0.25, 0.75])
    np.testing.assert_allclose(softmax_temp(np.array([1.0, 1.0, 1.0]), 0.1), np.full(3, 1 / 3))
    with pytest.raises(ValueError):
        softmax_temp(np.zeros(2), 0.0)


def test_recurrent_step_matches_sequence():
    rng = np.random.default_rng(4)
    net = RecurrentNet.build(2, 4, (3,), ["linear"], rng)
    xs = rng.normal(size=(5, 1, 2))
    out, _ = net.forward_sequence(xs)
    h = net.initial_state()
    for t in range(5):
        q, h = net.step(xs[t, 0], h)
        np.testing.assert_allclose(q, out[t, 0])


def test_masked_prefix_acts_like_fresh_start():
    rng = np.random.default_rng(5)
    net = RecurrentNet.build(2, 4, (3,), ["linear"], rng)
    xs = rng.normal(size=(4, 1, 2))
    mask = np.array([[False], [False], [True], [True]])
    out, _ = net.forward_sequence(xs, mask=mask)
    fresh, _ = net.forward_sequence(xs[2:])
    np.testing.assert_allclose(out[2:], fresh)


@pytest.mark.parametrize("kind", ["mlp", "recurrent"])
def test_net_text_round_trip(kind):
    rng = np.random.default_rng(6)
    if kind == "mlp":
        net = Mlp.build((3, 5, 2), ["relu", "tanh"], rng)
    else:
        net = RecurrentNet.build(3, 4, (5, 2), ["relu", "linear"], rng)
    text = dump_net(net)
    assert text.startswith("netfmt 1\n")
    back = load_net(text)
    for a, b in zip(net.params(), back.params()):
        np.testing.assert_array_equal(a, b)


def test_load_rejects_garbage():
    with pytest.raises(ValueError):
        load_net("hello\n")
