import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochopt.core import InvalidArgument
from stochopt.noise_reduction import (AggregatedState, DynamicSamplingPolicy, DynamicState,
                                      GradientTable, InsufficientSample, SVRGState,
                                      adaptive_norm_test, admissible_tau_max,
                                      dynamic_batch_size, dynamic_sampling_step,
                                      noise_reduction_rate, sag_direction, sag_step,
                                      saga_direction, saga_step, saga_stepsize, svrg_direction,
                                      svrg_outer, svrg_rate)
from stochopt.problems import (Dataset, LogisticProblem, identity_quadratic,
                               make_classification, spread_quadratic_ensemble)
from stochopt.sg_family import SGState, gradient_descent_step


@pytest.fixture
def five():
    return LogisticProblem(make_classification(5, 2, seed=1), 0.1)


def test_geometric_batch_sizes():
    pol = DynamicSamplingPolicy(2.0)
    assert dynamic_batch_size(pol, 1) == 1 and dynamic_batch_size(pol, 4) == 8
    assert abs(admissible_tau_max(0.1, 1.0) - 1 / 0.95) < 1e-15
    capped = DynamicSamplingPolicy(1.05, cap=100)
    assert dynamic_batch_size(capped, 200) == 100
    assert dynamic_batch_size(DynamicSamplingPolicy(4 / 3), 5) == 4   # (4/3)^4 = 3.16
    with pytest.raises(InvalidArgument):
        DynamicSamplingPolicy(1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(1.01, 3.0), st.integers(1, 60))
def test_geometric_matches_ceiling(tau, k):
    b = dynamic_batch_size(DynamicSamplingPolicy(tau), k)
    assert b >= tau ** (k - 1) * (1 - 1e-12) and b - 1 < tau ** (k - 1) * (1 + 1e-12)


def test_norm_test_examples():
    passed, phi = adaptive_norm_test([[1.0, 2.0]] * 4, np.array([1.0, 2.0]), 0.1)
    assert passed and phi == 0.0
    for chi, want in ((0.49, False), (0.5, True), (0.6, True)):
        passed, phi = adaptive_norm_test([[1.0], [3.0]], np.array([2.0]), chi)
        assert phi == 1.0 and passed is want
    with pytest.raises(InsufficientSample):
        adaptive_norm_test([[1.0]], np.array([1.0]), 0.5)


def test_norm_test_descent_guarantee():
    rng = np.random.default_rng(0)
    for chi in (0.1, 0.5, 0.9):
        for _ in range(50):
            gF = rng.normal(size=5)
            # g = gF + e with |e| = chi |g|: choose e along a random direction, solve for scale
            u = rng.normal(size=5)
            u /= np.linalg.norm(u)
            # |gF + t u|^2 chi^2 = t^2  ->  quadratic in t
            a = 1 - chi ** 2
            b = -2 * chi ** 2 * (gF @ u)
            c = -chi ** 2 * (gF @ gF)
            t = (-b + np.sqrt(b * b - 4 * a * c)) / (2 * a)
            g = gF + t * u
            assert abs(np.linalg.norm(g - gF) - chi * np.linalg.norm(g)) < 1e-10
            assert gF @ g >= (1 - chi) * (g @ g) - 1e-12


def test_dynamic_sampling_contraction():
    p = identity_quadratic(10, 1.0)
    alpha, tau = 0.5, 4 / 3
    K = 40
    gaps = np.zeros(K + 1)
    for seed in range(1, 21):
        s = DynamicState.start(np.ones(10), seed)
        g = [p.gap(s.w)]
        for _ in range(K):
            dynamic_sampling_step(s, p, alpha, DynamicSamplingPolicy(tau))
            g.append(p.gap(s.w))
        gaps += np.array(g) / 20
    emp = (gaps[K] / gaps[10]) ** (1 / (K - 10))
    assert emp <= noise_reduction_rate(alpha, 1.0, tau) + 0.05


def test_adaptive_never_below_backup():
    p = spread_quadratic_ensemble(500, 4, seed=3, spread=2.0)
    pol = DynamicSamplingPolicy(1.1, mode="adaptive", chi=0.3, cap=500)
    s = DynamicState.start(3 * np.ones(4), 3)
    grew = 0
    for k in range(1, 60):
        dynamic_sampling_step(s, p, 0.05, pol)
        assert s.last_batch >= dynamic_batch_size(pol, k)
        grew += s.last_batch > dynamic_batch_size(pol, k)
    assert grew > 0 and s.tests_failed > 0


def test_dynamic_sampling_switches_to_full_gradient():
    p = spread_quadratic_ensemble(6, 2, seed=1)
    s = DynamicState.start(np.ones(2), 0)
    for _ in range(12):
        dynamic_sampling_step(s, p, 0.05, DynamicSamplingPolicy(2.0))
    assert s.last_batch == 6
    ref = SGState.start(s.w.copy())
    gradient_descent_step(ref, p, 0.05)
    dynamic_sampling_step(s, p, 0.05, DynamicSamplingPolicy(2.0))
    assert np.array_equal(s.w, ref.w)


def test_svrg_direction_cancels_at_snapshot(five):
    w = np.array([0.3, -0.2])
    mu = five.gradient(w)
    for i in range(5):
        assert np.array_equal(svrg_direction(five, w, w, mu, i), mu)


def test_svrg_direction_unbiased(five):
    w_snap, w = np.array([0.3, -0.2]), np.array([-1.0, 0.4])
    mu = five.gradient(w_snap)
    avg = np.mean([svrg_direction(five, w, w_snap, mu, i) for i in range(5)], axis=0)
    assert np.linalg.norm(avg - five.gradient(w)) <= 1e-12


def test_svrg_rate_and_accounting(five):
    assert abs(svrg_rate(0.1, 50, 1.0, 1.0) - 0.5) < 1e-15
    assert svrg_rate(0.5, 50, 1.0, 1.0) == np.inf
    s = SVRGState.start(np.zeros(2), 1)
    for opt in ("a", "b", "c"):
        before = s.adp
        svrg_outer(s, five, 0.1, 7, option=opt)
        assert s.adp - before == 5 + 14


def test_svrg_scalar_path_matches_generic():
    """The linear-model shortcut agrees with the generic corrected direction."""
    p = LogisticProblem(make_classification(20, 3, seed=2), 0.05)
    s = SVRGState.start(np.zeros(3), 4)
    svrg_outer(s, p, 0.2, 15, option="a")
    # replay with the generic direction
    w_snap = np.zeros(3)
    mu = p.gradient(w_snap)
    idx = SVRGState.start(np.zeros(3), 4).stream.integers_block(
        np.arange(0, 15, dtype=np.uint64), "svrg", 20, 1)[:, 0]
    w = w_snap.copy()
    for i in idx:
        w = w - 0.2 * svrg_direction(p, w, w_snap, mu, i)
    assert np.allclose(s.w, w, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("storage", ["scalar", "dense"])
def test_saga_unbiased_and_sag_biased(five, storage):
    tab = GradientTable(five, storage)
    rng = np.random.default_rng(1)
    for j in range(5):
        val, vec = tab.fresh(rng.normal(size=2), j)
        tab.put(j, val, vec)
    w = np.array([0.2, 0.7])
    dirs_saga, dirs_sag = [], []
    for j in range(5):
        _, vec = tab.fresh(w, j)
        dirs_saga.append(saga_direction(tab, five, w, j, vec))
        dirs_sag.append(sag_direction(tab, five, w, j, vec))
    grad = five.gradient(w)
    assert np.linalg.norm(np.mean(dirs_saga, axis=0) - grad) <= 1e-12
    assert np.linalg.norm(np.mean(dirs_sag, axis=0) - grad) > 1e-3


@pytest.mark.parametrize("direction", [saga_direction, sag_direction])
def test_fresh_table_gives_exact_gradient(five, direction):
    w = np.array([0.2, 0.7])
    tab = GradientTable(five)
    tab.fill(w)
    for j in range(5):
        _, vec = tab.fresh(w, j)
        assert np.linalg.norm(direction(tab, five, w, j, vec) - five.gradient(w)) <= 1e-14


def test_sag_single_component_is_gradient_descent():
    p = LogisticProblem(Dataset(np.array([[1.0, -2.0]]), np.array([1.0])), 0.1)
    s = AggregatedState.start(p, np.zeros(2))
    ref = SGState.start(np.zeros(2))
    for _ in range(10):
        sag_step(s, p, 0.3)
        gradient_descent_step(ref, p, 0.3)
    assert np.allclose(s.w, ref.w, rtol=1e-14, atol=1e-16)


def test_saga_stepsize_rules():
    assert saga_stepsize(10.0, 1.0, 100) == 1 / 220
    assert saga_stepsize(10.0) == 1 / 30


@pytest.mark.parametrize("init", ["full", "incremental"])
@pytest.mark.parametrize("quad", [False, True])
def test_table_running_sum_consistent(init, quad):
    p = spread_quadratic_ensemble(10, 3, seed=2) if quad else \
        LogisticProblem(make_classification(10, 3, seed=2), 0.1)
    s = AggregatedState.start(p, np.zeros(3), seed=5, init=init)
    for _ in range(75):
        saga_step(s, p, 0.05)
        ref = s.table.recomputed_sum()
        assert np.linalg.norm(s.table.sum - ref) <= 1e-10 * max(1.0, np.linalg.norm(ref))


def test_saga_converges_linearly():
    p = LogisticProblem(make_classification(50, 4, seed=3), 0.1)
    s = AggregatedState.start(p, np.zeros(4), seed=2)
    a = saga_stepsize(p.L_component)
    for _ in range(50 * 60):
        saga_step(s, p, a)
    assert p.gap(s.w) <= 1e-10
