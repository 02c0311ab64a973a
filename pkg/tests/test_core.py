import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochopt.core import (WITH, WITHOUT, Diminishing, Diverged, Fixed, InvalidArgument,
                           RandomStream, Trace, TraceRecord, derive_seed, min_gamma,
                           recommended_beta, run_loop, sample_batch, stepsize_at)
from stochopt.problems import identity_quadratic
from stochopt.sg_family import SGState, sg_step


def test_same_key_same_draws():
    a, b = RandomStream(7), RandomStream(7)
    assert np.array_equal(a.normal(3, "noise", 5), b.normal(3, "noise", 5))
    assert np.array_equal(a.words(10, "x", 4), b.words(10, "x", 4))


def test_tags_and_seeds_separate_streams():
    s = RandomStream(7)
    assert not np.array_equal(s.uniform(1, "a", 8), s.uniform(1, "b", 8))
    assert not np.array_equal(s.uniform(1, "a", 8), RandomStream(8).uniform(1, "a", 8))
    assert not np.array_equal(s.uniform(1, "a", 8), s.uniform(2, "a", 8))


def test_block_draws_match_single_iterations():
    s = RandomStream(3)
    ks = np.arange(500, 1100, dtype=np.uint64)
    block = s.integers_block(ks, "batch", 17, 2)
    fresh = RandomStream(3)
    for row, k in zip(block, ks):
        assert np.array_equal(row, fresh.integers(int(k), "batch", 17, 2))
    nb = s.normal_block(ks[:5], "noise", 3)
    for row, k in zip(nb, ks[:5]):
        assert np.array_equal(row, RandomStream(3).normal(int(k), "noise", 3))


def test_evaluation_order_does_not_matter():
    a, b = RandomStream(11), RandomStream(11)
    fwd = [a.normal(k, "n", 2) for k in range(1, 2000, 37)]
    bwd = [b.normal(k, "n", 2) for k in reversed(range(1, 2000, 37))][::-1]
    for x, y in zip(fwd, bwd):
        assert np.array_equal(x, y)


def test_uniform_range_and_moments():
    u = RandomStream(1).uniform_block(np.arange(20000, dtype=np.uint64), "u", 1).ravel()
    assert u.min() >= 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.01
    z = RandomStream(1).normal_block(np.arange(20000, dtype=np.uint64), "z", 1).ravel()
    assert abs(z.mean()) < 0.03 and abs(z.var() - 1) < 0.04


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**63), st.integers(1, 10**6), st.integers(1, 200))
def test_permutation_is_a_permutation(seed, k, n):
    p = RandomStream(seed).permutation(k, "perm", n)
    assert np.array_equal(np.sort(p), np.arange(n))


def test_bad_seed_rejected():
    with pytest.raises(InvalidArgument):
        RandomStream(-1)
    with pytest.raises(InvalidArgument):
        RandomStream(2**64)


def test_derive_seed_deterministic_and_distinct():
    assert derive_seed(5, "a") == derive_seed(5, "a")
    assert derive_seed(5, "a") != derive_seed(5, "b")


def test_sample_batch_trivial_cases():
    s = RandomStream(0)
    for mode in (WITH, WITHOUT):
        assert list(sample_batch(s, 1, 1, mode, 1).indices) == [0]
    assert sorted(sample_batch(s, 5, 4, WITHOUT, 4).indices) == [0, 1, 2, 3]


def test_sample_batch_uniform_frequencies():
    s = RandomStream(2)
    idx = np.concatenate([sample_batch(s, k, 1, WITH, 10).indices for k in range(1, 100_001)])
    freq = np.bincount(idx, minlength=10) / idx.size
    assert np.all((freq >= 0.09) & (freq <= 0.11))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 10**5), st.integers(1, 60), st.data())
def test_without_replacement_has_no_duplicates(seed, k, n, data):
    size = data.draw(st.integers(1, n))
    b = sample_batch(RandomStream(seed), k, size, WITHOUT, n)
    assert len(set(b.indices.tolist())) == size
    b2 = sample_batch(RandomStream(seed), k, size, WITHOUT, n)
    assert np.array_equal(b.indices, b2.indices)
    assert b.k == k and b.seed == seed and b.size == size


def test_sample_batch_errors():
    s = RandomStream(0)
    with pytest.raises(InvalidArgument):
        sample_batch(s, 1, 5, WITHOUT, 4)
    with pytest.raises(InvalidArgument):
        sample_batch(s, 1, 0, WITH, 4)
    with pytest.raises(InvalidArgument):
        sample_batch(s, 1, 1, WITH, 0)
    with pytest.raises(InvalidArgument):
        sample_batch(s, 1, 1, "sometimes", 4)


def test_schedules():
    assert stepsize_at(Fixed(0.1), 999) == 0.1
    assert stepsize_at(Diminishing(2.0, 1.0), 1) == 1.0
    assert recommended_beta(1.0, 1.0) == 2.0
    assert min_gamma(2.0, 1.0) == 1.0
    with pytest.raises(InvalidArgument):
        stepsize_at(Fixed(0.1), 0)
    with pytest.raises(InvalidArgument):
        Fixed(0.0)
    with pytest.raises(InvalidArgument):
        Diminishing(-1.0)


def test_diminishing_sums():
    beta, gamma = 2.0, 1.0
    k = np.arange(1, 10**7 + 1, dtype=float)
    a = beta / (gamma + k)
    assert a.sum() > 30                       # grows like beta log K
    assert (a * a).sum() <= beta ** 2 * np.pi ** 2 / 6
    assert np.all(a > 0)


def test_trace_csv_format_and_adp_order():
    tr = Trace(1, "sg", "quad")
    tr.append(TraceRecord(1, 1, 0.5, 1, 1.25, 0.5))
    tr.append(TraceRecord(2, 2, 0.5, 1))
    text = tr.to_csv("hello")
    lines = text.splitlines()
    assert lines[0] == "# hello"
    assert lines[1] == "k,adp,alpha,batch_size,fval,gnorm,wall_ns"
    assert lines[2] == "1,1,0.5,1,1.25,0.5,"
    assert lines[3] == "2,2,0.5,1,,,"
    with pytest.raises(InvalidArgument):
        tr.append(TraceRecord(3, 1))


def test_run_loop_cadence_and_accounting():
    p = identity_quadratic(3, 1.0)
    st = SGState.start(np.ones(3), 4)
    st, tr = run_loop(st, lambda s: sg_step(s, p, 0.1, batch_size=2), p, max_iter=25,
                      trace_every=10)
    assert len(tr.records) == 25 and st.adp == 50
    traced = [r.k for r in tr.records if r.fval is not None]
    assert traced == [5, 10, 15, 20, 25]
    assert np.all(np.diff(tr.column("adp")) >= 0)


def test_run_loop_reproducible():
    p = identity_quadratic(4, 1.0)

    def go():
        st = SGState.start(np.ones(4), 9)
        return run_loop(st, lambda s: sg_step(s, p, 0.3), p, max_iter=300, trace_every=1)[1]
    assert go().to_csv() == go().to_csv()


def test_run_loop_divergence_carries_trace():
    p = identity_quadratic(2)
    st = SGState.start(np.ones(2), 0)
    with pytest.raises(Diverged) as e:
        run_loop(st, lambda s: sg_step(s, p, 5.0), p, max_iter=100, trace_every=1)
    tr = e.value.trace
    assert tr.status == "diverged"
    assert np.all(np.isfinite(e.value.state.w))
    assert tr.last_fval() <= 1e12
