import numpy as np
import pytest
import scipy.sparse as sp

from stochopt.core import CapabilityError, InvalidArgument
from stochopt.coordinate import (cache_error, cd_rate_bound, cd_start, cd_step, duality_gap,
                                 primal_from_dual, sdca_start, sdca_step)
from stochopt.problems import (Dataset, LeastSquaresProblem, LogisticProblem,
                               diagonal_quadratic, make_classification, make_regression,
                               spread_quadratic_ensemble)


def test_exact_cyclic_on_separable_quadratic():
    p = diagonal_quadratic([1.0, 4.0], center=[0.7, -1.3])
    for start in ([5.0, 5.0], [-2.0, 0.1]):
        st = cd_start(p, start, rule="cyclic")
        cd_step(st, p, stepsize="exact")
        cd_step(st, p, stepsize="exact")
        assert np.allclose(st.w, [0.7, -1.3], rtol=0, atol=1e-15)


def test_uniform_rate_on_quadratic():
    p = spread_quadratic_ensemble(1, 10, seed=7, cond=10.0)
    st0 = cd_start(p, np.ones(10))
    bound = cd_rate_bound(p.c, 10, st0.L_hat)
    K = 300
    mean = np.zeros(K + 1)
    for seed in range(1, 51):
        st = cd_start(p, np.ones(10), seed)
        g = [p.gap(st.w)]
        for _ in range(K):
            cd_step(st, p)
            g.append(p.gap(st.w))
        mean += np.array(g) / 50
    emp = (mean[K] / mean[0]) ** (1 / K)
    assert emp <= bound + 0.02


def test_gauss_southwell_tie_breaks_low():
    p = diagonal_quadratic([1.0, 1.0, 1.0])
    st = cd_start(p, [0.0, 2.0, -2.0], rule="gauss-southwell")
    cd_step(st, p)
    assert st.last_index == 1


def test_lhat_is_max_coordinate_constant(small_ls):
    st = cd_start(small_ls, np.zeros(5))
    assert st.L_hat == st.Li.max()
    col = np.sum(small_ls.X ** 2, axis=0) / small_ls.n + small_ls.lam
    assert np.allclose(st.Li, col, rtol=1e-14)


@pytest.mark.parametrize("rule", ["cyclic", "shuffled-cyclic", "uniform", "gauss-southwell",
                                  "lipschitz", "gs-lipschitz"])
@pytest.mark.parametrize("kind", ["ls", "logistic"])
def test_one_coordinate_per_step_and_cache(rule, kind, small_ls, small_logistic):
    p = small_ls if kind == "ls" else small_logistic
    st = cd_start(p, np.zeros(p.d), 3, rule)
    for _ in range(200):
        before = st.w.copy()
        cd_step(st, p)
        assert np.count_nonzero(st.w != before) <= 1
    assert cache_error(st, p) <= 1e-10
    ref = p.reference()[1]
    assert p.value(st.w) - ref <= 0.1 * (p.value(np.zeros(p.d)) - ref)


def test_shuffled_cyclic_visits_each_coordinate_per_pass(small_ls):
    st = cd_start(small_ls, np.zeros(5), 4, "shuffled-cyclic")
    for _ in range(4):
        seen = []
        for _ in range(5):
            cd_step(st, small_ls)
            seen.append(st.last_index)
        assert sorted(seen) == list(range(5))


def test_sparse_cost_counts_nonzeros():
    ds = make_regression(40, 30, seed=1)
    X = ds.X.copy()
    X[np.abs(X) < 1.0] = 0.0
    p = LeastSquaresProblem(Dataset(sp.csr_matrix(X), ds.y), 0.1)
    st = cd_start(p, np.zeros(30), 2)
    nnz = np.count_nonzero(X, axis=0)
    for _ in range(50):
        before = st.adp
        cd_step(st, p)
        assert st.adp - before == nnz[st.last_index]
    assert cache_error(st, p) <= 1e-10


def test_exact_line_search_needs_quadratic(small_logistic):
    st = cd_start(small_logistic, np.zeros(6))
    with pytest.raises(CapabilityError):
        cd_step(st, small_logistic, stepsize="exact")
    with pytest.raises(InvalidArgument):
        cd_start(small_logistic, np.zeros(6), rule="random-walk")


def test_sdca_scalar_ridge():
    p = LeastSquaresProblem(Dataset(np.array([[1.0]]), np.array([1.0])), 1.0)
    st = sdca_start(p)
    for _ in range(5):
        sdca_step(st, p)
    assert abs(st.w[0] - 0.5) <= 1e-15


def test_sdca_duality_gap():
    p = LeastSquaresProblem(make_regression(50, 10, seed=3), 0.1)
    st = sdca_start(p, 1)
    gap = duality_gap(p, st)
    for k in range(200 * 50):
        sdca_step(st, p)
        g = duality_gap(p, st)
        assert g >= -1e-14
        gap = g
    assert gap <= 1e-8
    assert np.linalg.norm(st.w - primal_from_dual(p, st.v)) <= 1e-10 * np.linalg.norm(st.w)


def test_sdca_implied_primal_after_many_steps():
    p = LeastSquaresProblem(make_regression(30, 8, seed=5), 0.05)
    st = sdca_start(p, 2)
    for _ in range(10_000):
        sdca_step(st, p)
    ref = primal_from_dual(p, st.v)
    assert np.linalg.norm(st.w - ref) <= 1e-10 * np.linalg.norm(ref)


def test_sdca_rejects_other_losses():
    with pytest.raises(CapabilityError):
        sdca_start(LogisticProblem(make_classification(5, 2), 0.1))
