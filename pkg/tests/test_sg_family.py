import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochopt.core import Diverged, InvalidArgument, InvSqrt, RandomStream
from stochopt.problems import (Problem, diagonal_quadratic, identity_quadratic,
                               spread_quadratic_ensemble)
from stochopt.sg_family import (SGState, adagrad_step, effective_stepsizes,
                                gradient_descent_step, heavy_ball_parameters, momentum_step,
                                nesterov_step, rmsprop_step, sg_step, stochastic_direction,
                                update_average)


class ConstantGradient(Problem):
    """Linear objective with a fixed gradient; exposes accumulator closed forms."""
    name = "linear"

    def __init__(self, g):
        self.g = np.asarray(g, float)
        self.d = self.g.size

    def batch_gradient(self, w, batch):
        return self.g.copy()

    def component_value(self, w, i):
        return float(self.g @ w)


def test_sg_hand_step():
    st_ = SGState.start([1.0])
    sg_step(st_, identity_quadratic(1), 0.5)
    assert st_.w.tolist() == [0.5] and st_.adp == 1 and st_.k == 2


def test_full_batch_without_replacement_is_gradient_descent():
    p = spread_quadratic_ensemble(8, 3, seed=1)
    a, b = SGState.start(np.ones(3), 4), SGState.start(np.ones(3), 4)
    for _ in range(10):
        sg_step(a, p, 0.1, batch_size=8, mode="without-replacement")
        gradient_descent_step(b, p, 0.1)
    assert np.allclose(a.w, b.w, rtol=1e-14, atol=1e-15)
    assert a.adp == b.adp == 80


@pytest.mark.parametrize("b", [1, 4, 16])
def test_minibatch_direction_variance(b):
    M = 3.0
    p = identity_quadratic(4, M)
    st_ = SGState.start(np.zeros(4), 2)
    G = []
    for k in range(1, 10_001):
        st_.k = k
        G.append(stochastic_direction(st_, p, b))
    tr = np.sum(np.var(np.array(G), axis=0))
    assert abs(tr - M / b) <= 0.1 * M / b


def test_adp_is_iterations_times_batch():
    p = identity_quadratic(2, 1.0)
    st_ = SGState.start(np.ones(2), 1)
    for _ in range(37):
        sg_step(st_, p, 0.1, batch_size=3)
    assert st_.adp == 111


def test_momentum_hand_recursion():
    p = identity_quadratic(1)
    st_ = SGState.start([1.0])
    momentum_step(st_, p, 0.5, 0.5)
    assert st_.w[0] == 0.5
    momentum_step(st_, p, 0.5, 0.5)
    # independent scalar simulation
    w_prev, w = 1.0, 1.0
    for _ in range(2):
        w_prev, w = w, w - 0.5 * w + 0.5 * (w - w_prev)
    assert st_.w[0] == w == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 0.9), st.integers(1, 4))
def test_zero_momentum_is_sg_bitwise(seed, alpha, b):
    p = identity_quadratic(3, 1.0)
    w1 = RandomStream(seed).normal(0, "w1", 3)
    s0, s1, s2 = (SGState.start(w1, seed) for _ in range(3))
    for _ in range(5):
        sg_step(s0, p, alpha, batch_size=b)
        momentum_step(s1, p, alpha, 0.0, batch_size=b)
        nesterov_step(s2, p, alpha, 0.0, batch_size=b)
    assert np.array_equal(s0.w, s1.w) and np.array_equal(s0.w, s2.w)


def test_heavy_ball_contraction():
    p = diagonal_quadratic(np.geomspace(1.0, 100.0, 20))
    alpha, beta, rate = heavy_ball_parameters(1.0, 100.0)
    assert abs(rate - 9 / 11) < 1e-15
    st_ = SGState.start(np.ones(20))
    err = []
    for _ in range(400):
        momentum_step(st_, p, alpha, beta)
        err.append(np.linalg.norm(st_.w))
    emp = (err[399] / err[199]) ** (1 / 200)
    assert abs(emp - rate) <= 0.1 * rate


def test_nesterov_beats_gradient_descent():
    p = diagonal_quadratic(np.geomspace(1e-4, 1.0, 50))
    a, b = SGState.start(np.ones(50)), SGState.start(np.ones(50))
    for _ in range(100):
        nesterov_step(a, p, 1.0)
        sg_step(b, p, 1.0)
    assert 5 * p.value(a.w) <= p.value(b.w)


def test_nesterov_evaluation_point():
    p = identity_quadratic(2)
    st_ = SGState.start([1.0, -2.0])
    nesterov_step(st_, p, 0.3, 0.5)
    w_prev, w_k = st_.w - st_.velocity, st_.w.copy()
    nesterov_step(st_, p, 0.3, 0.5)
    assert np.array_equal(st_.last_eval_point, w_k + 0.5 * (w_k - w_prev))


def test_adagrad_first_step_is_sign():
    st_ = SGState.start(np.zeros(2))
    adagrad_step(st_, ConstantGradient([2.0, -3.0]), 1.0, mu_reg=0.0)
    assert st_.w.tolist() == [-1.0, 1.0]


def test_adagrad_constant_gradient_closed_form():
    st_ = SGState.start(np.zeros(3))
    prob = ConstantGradient([1.0, 1.0, 1.0])
    prev = np.inf
    for k in range(1, 51):
        adagrad_step(st_, prob, 0.7)
        eff = effective_stepsizes(st_, 0.7)
        assert np.allclose(eff, 0.7 / np.sqrt(k + 1e-8), rtol=1e-14)
        assert np.all(eff <= prev)
        prev = eff


def test_adagrad_scale_free():
    p = identity_quadratic(3, 1.0)

    class Doubled(Problem):
        d, noise = 3, 0.0

        def sample_gradient(self, w, batch, stream):
            return 2.0 * p.sample_gradient(w, batch, stream)

    a, b = SGState.start(np.ones(3), 5), SGState.start(np.ones(3), 5)
    for _ in range(20):
        wa, wb = a.w.copy(), b.w.copy()
        adagrad_step(a, p, 0.1, mu_reg=0.0)
        adagrad_step(b, Doubled(), 0.1, mu_reg=0.0)
        assert np.allclose(a.w - wa, b.w - wb, rtol=1e-12, atol=1e-15)


def test_rmsprop_geometric_convergence():
    st_ = SGState.start(np.zeros(2))
    prob = ConstantGradient([3.0, 0.5])
    for _ in range(200):
        rmsprop_step(st_, prob, 0.1, decay=0.1)
    assert np.all(np.abs(st_.accum - prob.g ** 2) <= 1e-6 * prob.g ** 2)


def test_rmsprop_full_replacement_and_zero_coordinate():
    st_ = SGState.start(np.array([1.0, 5.0]))
    p = ConstantGradient([-1.5, 0.0])
    for _ in range(3):
        rmsprop_step(st_, p, 0.1, decay=1.0)
        assert np.array_equal(st_.accum, [2.25, 0.0])
    assert st_.w[1] == 5.0


def test_average_trivial_cases():
    st_ = SGState.start([0.0])
    st_.w = np.array([1.0])
    st_.k = 2
    update_average(st_)
    assert st_.avg[0] == 0.5
    st_ = SGState.start([3.0, 4.0])
    for k in range(2, 10):
        st_.k = k
        update_average(st_)
    assert np.allclose(st_.avg, [3.0, 4.0], rtol=0, atol=1e-15)


def test_averaging_reduces_variance():
    p = identity_quadratic(2, 1.0)
    raw, avg = [], []
    for seed in range(50):
        st_ = SGState.start(np.zeros(2), seed)
        sched = InvSqrt(0.5)
        for _ in range(10_000):
            sg_step(st_, p, sched)
            update_average(st_)
        raw.append(st_.w)
        avg.append(st_.avg)
    v_raw = np.sum(np.var(raw, axis=0))
    v_avg = np.sum(np.var(avg, axis=0))
    assert v_avg * 5 <= v_raw


def test_bad_arguments():
    p = identity_quadratic(1)
    with pytest.raises(InvalidArgument):
        momentum_step(SGState.start([1.0]), p, 0.1, 1.0)
    with pytest.raises(InvalidArgument):
        sg_step(SGState.start([1.0]), p, 0.1, batch_size=0)
    with pytest.raises(InvalidArgument):
        rmsprop_step(SGState.start([1.0]), p, 0.1, decay=0.0)


def test_divergence_keeps_last_finite_state():
    p = identity_quadratic(1)
    st_ = SGState.start([1.0])
    with pytest.raises(Diverged) as e, np.errstate(over="ignore", invalid="ignore"):
        for _ in range(5000):
            sg_step(st_, p, 1e10)
    assert np.all(np.isfinite(e.value.state.w))
