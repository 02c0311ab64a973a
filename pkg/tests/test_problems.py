import numpy as np
import pytest
import scipy.sparse as sp

from stochopt.core import Batch, InvalidArgument, RandomStream, sample_batch
from stochopt.problems import (CompositeL1Problem, Dataset, DoubleWellProblem, FormatError,
                               LeastSquaresProblem, LogisticProblem, ParseError,
                               QuadraticEnsembleProblem, identity_quadratic, load_libsvm,
                               make_classification, spread_quadratic_ensemble)

from conftest import finite_difference_gradient, tiny_dataset


def _write(tmp_path, text):
    p = tmp_path / "data.svm"
    p.write_text(text)
    return p


def test_libsvm_basic_row(tmp_path):
    ds = load_libsvm(_write(tmp_path, "+1 3:0.5 7:1.0\n-1 1:2\n"))
    assert ds.n == 2 and ds.d == 7
    assert ds.y.tolist() == [1.0, -1.0]
    cols, vals = ds.row(0)
    assert cols.tolist() == [2, 6] and vals.tolist() == [0.5, 1.0]
    assert sp.issparse(ds.X)


def test_libsvm_empty_file(tmp_path):
    ds = load_libsvm(_write(tmp_path, ""))
    assert ds.n == 0
    with pytest.raises(InvalidArgument):
        LogisticProblem(ds).require_nonempty()


@pytest.mark.parametrize("text, err", [
    ("1 5:2 3:1\n", FormatError),
    ("1 3:2 3:1\n", FormatError),
    ("1 0:2\n", FormatError),
    ("2 1:1\n", FormatError),
    ("abc 1:1\n", ParseError),
    ("1 1-1\n", ParseError),
    ("1 x:1\n", ParseError),
])
def test_libsvm_rejects_bad_lines(tmp_path, text, err):
    with pytest.raises(err):
        load_libsvm(_write(tmp_path, text))


def test_libsvm_regression_labels(tmp_path):
    ds = load_libsvm(_write(tmp_path, "0.25 1:1\n"), classification=False)
    assert ds.y.tolist() == [0.25]


def test_logistic_component_gradient_at_zero():
    ds = tiny_dataset()
    p = LogisticProblem(ds, 0.3)
    for i in range(ds.n):
        assert np.allclose(p.component_gradient(np.zeros(3), i), -ds.y[i] * ds.X[i] / 2,
                           rtol=0, atol=1e-15)


def test_quadratic_component_gradient_by_hand():
    Q = np.array([[[2.0, 1.0], [1.0, 3.0]], [[1.0, 0.0], [0.0, 1.0]]])
    m = np.array([[1.0, -1.0], [0.0, 2.0]])
    p = QuadraticEnsembleProblem(Q, m)
    w = np.array([0.5, 0.25])
    # Q_0 (w - m_0) = [[2,1],[1,3]] @ [-0.5, 1.25]
    assert np.allclose(p.component_gradient(w, 0), [0.25, 3.25], atol=1e-15)
    assert np.allclose(p.component_gradient(w, 1), [0.5, -1.75], atol=1e-15)


@pytest.mark.parametrize("make", ["logistic", "ls", "quad", "well"])
def test_gradients_match_finite_differences(make, small_logistic, small_ls):
    p = {"logistic": small_logistic, "ls": small_ls,
         "quad": spread_quadratic_ensemble(4, 5, seed=2), "well": DoubleWellProblem()}[make]
    rs = RandomStream(1)
    for t in range(5):
        w = rs.normal_block(t, "w", p.d)
        fd = finite_difference_gradient(p.value, w, 1e-6 * (1 + np.linalg.norm(w)))
        g = p.gradient(w)
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))
        if p.n > 1:
            i = t % p.n
            fi = finite_difference_gradient(lambda x: p.component_value(x, i), w, 1e-6)
            assert np.linalg.norm(p.component_gradient(w, i) - fi) <= 1e-6 * max(1, np.linalg.norm(fi))


def test_full_gradient_is_average_of_components(small_logistic, small_ls):
    for p in (small_logistic, small_ls, spread_quadratic_ensemble(6, 3, seed=1)):
        w = RandomStream(2).normal_block(0, "w", p.d)
        avg = np.zeros(p.d)
        for i in range(p.n):
            avg += p.component_gradient(w, i)
        avg /= p.n
        assert np.linalg.norm(avg - p.gradient(w)) <= 1e-12 * np.linalg.norm(avg)


def test_sparse_and_dense_agree():
    ds = make_classification(30, 8, seed=4, density=0.4)
    dense = LogisticProblem(ds, 0.1)
    sparse = LogisticProblem(Dataset(sp.csr_matrix(ds.X), ds.y), 0.1)
    w = RandomStream(0).normal_block(0, "w", 8)
    assert np.allclose(dense.gradient(w), sparse.gradient(w), rtol=1e-13, atol=1e-15)
    for i in range(5):
        assert np.allclose(dense.component_gradient(w, i), sparse.component_gradient(w, i),
                           rtol=1e-13, atol=1e-15)
    v = np.ones(8)
    assert np.allclose(dense.hessian_vector_product(w, None, v),
                       sparse.hessian_vector_product(w, None, v), rtol=1e-13)


def test_hvp_quadratic_and_linearity(small_logistic):
    p = spread_quadratic_ensemble(3, 4, seed=3)
    v = np.arange(4.0)
    b = Batch(1, np.array([1]), "with-replacement", 0)
    assert np.array_equal(p.hessian_vector_product(np.zeros(4), b, v), p.Qs[1] @ v)
    q = small_logistic
    rs = RandomStream(5)
    w, u, z = (rs.normal_block(i, "x", q.d) for i in range(3))
    lhs = q.hessian_vector_product(w, None, 2.0 * u - 3.0 * z)
    rhs = 2.0 * q.hessian_vector_product(w, None, u) - 3.0 * q.hessian_vector_product(w, None, z)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


def test_hvp_matches_directional_differences(small_logistic):
    p = small_logistic
    rs = RandomStream(8)
    batch = sample_batch(rs, 1, 10, "without-replacement", p.n)
    for t in range(5):
        w, v = rs.normal_block(t, "w", p.d), rs.normal_block(t, "v", p.d)
        eps = 1e-5
        fd = (p.batch_gradient(w + eps * v, batch) - p.batch_gradient(w - eps * v, batch)) / (2 * eps)
        hv = p.hessian_vector_product(w, batch, v)
        assert np.linalg.norm(hv - fd) <= 1e-5 * np.linalg.norm(fd)


def test_gauss_newton_psd(small_logistic, small_ls):
    rs = RandomStream(3)
    for t in range(100):
        w, v = rs.normal_block(t, "w", 6), rs.normal_block(t, "v", 6)
        for variant in ("generalized", "log-loss-fisher"):
            assert v @ small_logistic.gauss_newton_vector_product(w, None, v, variant) >= 0
        w5, v5 = w[:5], v[:5]
        assert v5 @ small_ls.gauss_newton_vector_product(w5, None, v5, "plain") >= 0


def test_gauss_newton_equals_hessian_when_interpolating():
    rs = RandomStream(4)
    X = rs.normal_block(0, "X", 40).reshape(10, 4)
    w = rs.normal_block(0, "w", 4)
    p = LeastSquaresProblem(Dataset(X, X @ w))
    v = rs.normal_block(1, "v", 4)
    a = p.gauss_newton_vector_product(w, None, v, "plain")
    b = p.hessian_vector_product(w, None, v)
    assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(b)


def test_fisher_dense_enumeration():
    X = np.array([[1.0, 2.0], [-0.5, 1.0], [0.3, -0.7]])
    y = np.array([1.0, -1.0, 1.0])
    p = LogisticProblem(Dataset(X, y), 0.0)
    w, v = np.array([0.2, -0.4]), np.array([1.0, 0.5])
    F = np.zeros((2, 2))
    for i in range(3):
        gi = p.component_gradient(w, i)
        F += np.outer(gi, gi) / 3
    assert np.allclose(p.gauss_newton_vector_product(w, None, v, "log-loss-fisher"), F @ v,
                       rtol=1e-13, atol=1e-16)


def test_unsupported_variant_is_capability_error(small_ls):
    from stochopt.core import CapabilityError
    with pytest.raises(CapabilityError):
        small_ls.gauss_newton_vector_product(np.zeros(5), None, np.ones(5), "generalized")
    with pytest.raises(CapabilityError):
        DoubleWellProblem().gauss_newton_vector_product(np.zeros(2), None, np.ones(2), "plain")


def test_strong_convexity_gap_bound_and_descent_lemma(small_logistic):
    for p in (small_logistic, spread_quadratic_ensemble(5, 4, seed=9)):
        _, fs = p.reference()
        rs = RandomStream(12)
        for t in range(100):
            w = 2 * rs.normal_block(t, "w", p.d)
            g = p.gradient(w)
            assert 2 * p.c * (p.value(w) - fs) <= g @ g * (1 + 1e-10)
            wb = 2 * rs.normal_block(t, "wb", p.d)
            gb = p.gradient(wb)
            dw = w - wb
            assert p.value(w) <= p.value(wb) + gb @ dw + 0.5 * p.L * dw @ dw + 1e-12


def test_logistic_hessian_spectrum_within_bounds(small_logistic):
    p = small_logistic
    H = p.hessian_dense(RandomStream(0).normal_block(0, "w", p.d))
    ev = np.linalg.eigvalsh(H)
    assert ev[0] >= p.lam - 1e-12 and ev[-1] <= p.L + 1e-12


def test_logistic_reference_is_stationary(small_logistic):
    w, f = small_logistic.reference()
    assert np.linalg.norm(small_logistic.gradient(w)) <= 1e-12


def test_logistic_rejects_bad_labels():
    with pytest.raises(InvalidArgument):
        LogisticProblem(Dataset(np.eye(2), np.array([0.0, 1.0])))


def test_noise_oracle_covariance_trace():
    p = identity_quadratic(5, 2.0)
    s = RandomStream(3)
    w = np.ones(5)
    G = np.array([p.sample_gradient(w, sample_batch(s, k, 1), s) for k in range(1, 10_001)])
    tr = np.sum(np.var(G - w, axis=0))
    assert abs(tr - 2.0) <= 0.05 * 2.0
    assert np.linalg.norm(G.mean(axis=0) - w) < 0.05


def test_composite_value_and_subgradient():
    smooth = LeastSquaresProblem(Dataset(np.eye(3), np.array([1.0, -2.0, 0.1])))
    p = CompositeL1Problem(smooth, 0.5)
    w = np.array([0.3, -1.0, 0.0])
    assert p.value(w) == smooth.value(w) + 0.5 * np.sum(np.abs(w))
    with pytest.raises(InvalidArgument):
        CompositeL1Problem(smooth, 0.0)
    ws, _ = p.reference()
    assert np.linalg.norm(p.gradient(ws)) <= 1e-10


def test_double_well_properties():
    p = DoubleWellProblem()
    assert p.value(np.array([1.0, 0.0])) == 0.0 and p.value(np.array([-1.0, 0.0])) == 0.0
    assert p.L == 11.0
    assert np.array_equal(p.project(np.array([3.0, -2.5])), [2.0, -2.0])
    rs = RandomStream(1)
    for t in range(100):
        a, b = p.project(3 * rs.normal_block(t, "a", 2)), p.project(3 * rs.normal_block(t, "b", 2))
        assert np.linalg.norm(p.gradient(a) - p.gradient(b)) <= p.L * np.linalg.norm(a - b) + 1e-12


def test_quadratic_constants():
    p = spread_quadratic_ensemble(3, 6, seed=2, cond=20.0)
    assert p.c <= p.L
    assert abs(p.L / p.c - 20.0) < 1e-8
    assert np.linalg.norm(p.gradient(p.w_star)) <= 1e-12
