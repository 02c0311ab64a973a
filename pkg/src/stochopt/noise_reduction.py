"""Variance-controlled methods: dynamic sampling, SVRG, SAGA and SAG."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .core import (WITH, Diverged, InvalidArgument, RandomStream, as_schedule,
                   sample_batch)
from .problems import LinearModelProblem


class InsufficientSample(ValueError):
    pass


# --- dynamic sampling ---------------------------------------------------------

@dataclass
class DynamicSamplingPolicy:
    """Batch-size rule: prescribed geometric growth or the adaptive norm test.

    In adaptive mode ``tau`` is the backup growth factor that the batch size
    is never allowed to fall below.
    """
    tau: float
    mode: str = "geometric"       # geometric | adaptive
    chi: float = 0.5
    cap: int | None = None        # population size for finite sums
    growth: float = 1.5           # adaptive: multiplier applied after a failed test

    def __post_init__(self):
        if not self.tau > 1:
            raise InvalidArgument("tau must exceed 1")
        if self.mode not in ("geometric", "adaptive"):
            raise InvalidArgument(f"unknown sampling mode {self.mode!r}")
        if self.mode == "adaptive" and not 0 <= self.chi < 1:
            raise InvalidArgument("chi must lie in [0, 1)")


@lru_cache(maxsize=4096)
def _ceil_power(tau, e):
    f = tau ** e
    if f > 2.0 ** 52:
        return math.ceil(f)
    return math.ceil(Fraction(tau) ** e)


def dynamic_batch_size(policy: DynamicSamplingPolicy, k: int) -> int:
    """ceil(tau^(k-1)), capped at the population size."""
    if k < 1:
        raise InvalidArgument("iterations are counted from 1")
    if not policy.tau > 1:
        raise InvalidArgument("tau must exceed 1")
    cap = policy.cap
    if cap is not None and (k - 1) * math.log(policy.tau) > math.log(cap) + 1e-9:
        return cap
    b = _ceil_power(float(policy.tau), k - 1)
    return b if cap is None else min(b, cap)


def admissible_tau_max(alpha, c, mu=1.0):
    """Upper end of (1, (1 - alpha c mu / 2)^-1] for the geometric growth factor."""
    return 1.0 / (1.0 - alpha * c * mu / 2.0)


def noise_reduction_rate(alpha, c, tau, mu=1.0, zeta=0.0):
    return max(1.0 - alpha * c * mu / 2.0, 1.0 / tau, zeta)


def adaptive_norm_test(grads, g, chi):
    """Return (passed, phi) with phi = trace(sample covariance) / batch size."""
    G = np.atleast_2d(np.asarray(grads, dtype=float))
    b = G.shape[0]
    if b < 2:
        raise InsufficientSample("the norm test needs at least two samples")
    dev = G - G.mean(axis=0)
    phi = float(np.sum(dev * dev)) / (b - 1) / b
    return phi <= chi * chi * float(g @ g), phi


@dataclass
class DynamicState:
    w: np.ndarray
    stream: RandomStream
    k: int = 1
    adp: int = 0
    next_size: int = 1
    last_alpha: float = None
    last_batch: int = None
    last_phi: float = None
    last_pass: bool = None
    tests_failed: int = 0

    @classmethod
    def start(cls, w1, seed=0):
        return cls(np.array(w1, dtype=np.float64), RandomStream(seed))


def dynamic_sampling_step(state: DynamicState, problem, alpha, policy: DynamicSamplingPolicy):
    """One SG step with the batch size dictated by ``policy``.

    Once the batch size reaches the population size of a finite sum the step
    uses the exact full gradient.
    """
    a = as_schedule(alpha).at(state.k)
    cap = policy.cap
    if cap is None and problem.n > 1:
        cap = problem.n
    pol = policy if cap == policy.cap else DynamicSamplingPolicy(
        policy.tau, policy.mode, policy.chi, cap, policy.growth)
    backup = dynamic_batch_size(pol, state.k)
    if policy.mode == "geometric":
        b = backup
    else:
        b = max(state.next_size, backup)
        if cap is not None:
            b = min(b, cap)
    if cap is not None and b >= cap and problem.n > 1:
        g = problem.gradient(state.w)
        b = cap
        state.last_pass = True
    elif policy.mode == "adaptive" and b >= 2:
        batch = sample_batch(state.stream, state.k, b, WITH, problem.n)
        G = problem.sample_gradients(state.w, batch, state.stream)
        g = G.mean(axis=0)
        passed, phi = adaptive_norm_test(G, g, policy.chi)
        state.last_phi, state.last_pass = phi, passed
        if not passed:
            state.tests_failed += 1
            b_next = math.ceil(policy.growth * b)
            state.next_size = b_next if cap is None else min(b_next, cap)
        else:
            state.next_size = b
    else:
        batch = sample_batch(state.stream, state.k, b, WITH, problem.n)
        g = problem.sample_gradient(state.w, batch, state.stream)
        if policy.mode == "adaptive":
            state.next_size = 2
    w_new = state.w - a * g
    if not np.all(np.isfinite(w_new)):
        raise Diverged(f"non-finite iterate at iteration {state.k}", state)
    state.w = w_new
    state.k += 1
    state.adp += b
    state.last_alpha, state.last_batch = a, b
    return state


# --- SVRG ---------------------------------------------------------------------

def svrg_rate(alpha, m, c, L):
    """rho = (1/(1 - 2 alpha L)) (1/(m c alpha) + 2 L alpha); < 1 means a valid pair."""
    if 2 * alpha * L >= 1:
        return math.inf
    return (1.0 / (1.0 - 2.0 * alpha * L)) * (1.0 / (m * c * alpha) + 2.0 * L * alpha)


@dataclass
class SVRGState:
    w: np.ndarray
    stream: RandomStream
    k: int = 1               # outer iteration
    adp: int = 0
    inner: int = 0           # global inner-step counter, keys the index stream
    last_alpha: float = None
    last_batch: int = None

    @classmethod
    def start(cls, w1, seed=0):
        return cls(np.array(w1, dtype=np.float64), RandomStream(seed))


def svrg_direction(problem, w_inner, w_snap, full_grad, i):
    return problem.component_gradient(w_inner, i) - problem.component_gradient(w_snap, i) + full_grad


def svrg_outer(state: SVRGState, problem, alpha, m, option="b"):
    """One outer iteration: full gradient at w_k, then m corrected inner steps."""
    if m < 1 or not alpha > 0:
        raise InvalidArgument("need alpha > 0 and m >= 1")
    if option not in ("a", "b", "c"):
        raise InvalidArgument(f"unknown SVRG option {option!r}")
    problem.require_nonempty()
    n = problem.n
    w_snap = state.w
    mu = problem.gradient(w_snap)
    idx = state.stream.integers_block(np.arange(state.inner, state.inner + m, dtype=np.uint64),
                                      "svrg", n, 1)[:, 0]
    lin = isinstance(problem, LinearModelProblem)
    if lin:
        lam = problem.lam
    wt = w_snap.copy()
    acc = np.zeros_like(wt)
    pick = None
    if option == "c":
        pick = int(state.stream.integers(state.k, "svrg-option", m, 1)[0])
    chosen = None
    for j in range(m):
        i = idx[j]
        if lin:
            # linear prediction: difference of two scalar multiples of x_i
            ds = problem.component_scalar(wt, i) - problem.component_scalar(w_snap, i)
            d = mu + lam * (wt - w_snap)
            problem.add_row(d, i, ds)
        else:
            d = svrg_direction(problem, wt, w_snap, mu, i)
        wt = wt - alpha * d
        if not np.all(np.isfinite(wt)):
            raise Diverged(f"non-finite inner iterate in outer iteration {state.k}", state)
        acc += wt
        if j == pick:
            chosen = wt
    if option == "a":
        w_new = wt
    elif option == "b":
        w_new = acc / m
    else:
        w_new = chosen
    state.w = w_new
    state.k += 1
    state.inner += m
    state.adp += n + 2 * m
    state.last_alpha, state.last_batch = alpha, n + 2 * m
    return state


# --- SAGA / SAG ---------------------------------------------------------------

class GradientTable:
    """Stored component gradients and their running sum.

    For linear-prediction losses only the scalar phi'(x_j^T w_[j]) is kept per
    component; the stored loss gradient is that scalar times x_j.  The ridge
    term's gradient lam*w is exact and identical for all components, so it is
    applied at the current iterate instead of being stored.
    """

    def __init__(self, problem, storage="auto"):
        self.problem = problem
        n, d = problem.n, problem.d
        if storage == "auto":
            storage = "scalar" if isinstance(problem, LinearModelProblem) else "dense"
        if storage == "scalar" and not isinstance(problem, LinearModelProblem):
            raise InvalidArgument("scalar storage needs a linear-prediction problem")
        self.storage = storage
        self.seen = np.zeros(n, dtype=bool)
        self.count = 0
        self.sum = np.zeros(d)
        if storage == "scalar":
            self.scal = np.zeros(n)
        else:
            self.vec = np.zeros((n, d))

    def entry(self, j):
        if self.storage == "scalar":
            g = np.zeros(self.problem.d)
            return self.problem.add_row(g, j, self.scal[j])
        return self.vec[j].copy()

    def fresh(self, w, j):
        """Fresh stored quantity for component j at w: (scalar or vector, loss-gradient vector)."""
        if self.storage == "scalar":
            s = self.problem.component_scalar(w, j)
            return s, self.problem.add_row(np.zeros(self.problem.d), j, s)
        g = self.problem.component_gradient(w, j)
        return g, g

    def put(self, j, val, vec):
        old = self.entry(j) if self.seen[j] else None
        if self.storage == "scalar":
            self.scal[j] = val
        else:
            self.vec[j] = val
        if old is not None:
            self.sum += vec - old
        else:
            self.sum += vec
            self.seen[j] = True
            self.count += 1

    def exact_term(self, w):
        if self.storage == "scalar":
            return self.problem.lam * w
        return 0.0

    def recomputed_sum(self):
        if self.storage == "scalar":
            p = self.problem
            s = np.where(self.seen, self.scal, 0.0)
            return np.asarray(p.X.T @ s).ravel()
        return self.vec[self.seen].sum(axis=0) if self.count else np.zeros(self.problem.d)

    def verify(self, rtol=1e-10):
        ref = self.recomputed_sum()
        err = np.linalg.norm(self.sum - ref)
        return err <= rtol * max(1.0, np.linalg.norm(ref))

    def resync(self):
        self.sum = self.recomputed_sum()

    def fill(self, w):
        for j in range(self.problem.n):
            val, vec = self.fresh(w, j)
            self.put(j, val, vec)
        self.resync()


@dataclass
class AggregatedState:
    w: np.ndarray
    stream: RandomStream
    table: GradientTable
    k: int = 1
    adp: int = 0
    last_alpha: float = None
    last_batch: int = None
    init: str = "full"

    @classmethod
    def start(cls, problem, w1, seed=0, init="full", storage="auto"):
        """``init='full'`` evaluates all n gradients at w_1 (charged n ADP);
        ``init='incremental'`` fills the table during a first sequential pass."""
        problem.require_nonempty()
        w1 = np.array(w1, dtype=np.float64)
        tab = GradientTable(problem, storage)
        st = cls(w1, RandomStream(seed), tab, init=init)
        if init == "full":
            tab.fill(w1)
            st.adp = problem.n
        elif init != "incremental":
            raise InvalidArgument(f"unknown table initialization {init!r}")
        return st


def _pick(state, problem):
    tab = state.table
    if state.init == "incremental" and tab.count < problem.n:
        return tab.count          # first pass assimilates components in order
    return int(state.stream.integers(state.k, "saga", problem.n, 1)[0])


def saga_direction(table, problem, w, j, fresh_vec):
    """grad f_j(w) - stored_j + average of stored (plus the exact ridge term)."""
    n = problem.n if table.count == problem.n else max(table.count, 1)
    old = table.entry(j) if table.seen[j] else np.zeros(problem.d)
    return fresh_vec - old + table.sum / n + table.exact_term(w)


def sag_direction(table, problem, w, j, fresh_vec):
    """(1/n)(grad f_j(w) - stored_j + sum of stored) (plus the exact ridge term)."""
    n = problem.n if table.count == problem.n else max(table.count + (not table.seen[j]), 1)
    old = table.entry(j) if table.seen[j] else np.zeros(problem.d)
    return (fresh_vec - old + table.sum) / n + table.exact_term(w)


def _aggregated_step(state, problem, alpha, rule):
    a = as_schedule(alpha).at(state.k)
    tab = state.table
    j = _pick(state, problem)
    val, vec = tab.fresh(state.w, j)
    if state.init == "incremental" and not tab.seen[j]:
        # assimilate first, then step along the average of what has been seen
        tab.put(j, val, vec)
        g = tab.sum / tab.count + tab.exact_term(state.w)
    else:
        g = rule(tab, problem, state.w, j, vec)
        tab.put(j, val, vec)
    w_new = state.w - a * g
    if not np.all(np.isfinite(w_new)):
        raise Diverged(f"non-finite iterate at iteration {state.k}", state)
    state.w = w_new
    state.k += 1
    state.adp += 1
    state.last_alpha, state.last_batch = a, 1
    if state.k % problem.n == 0:
        tab.resync()
    return state


def saga_step(state: AggregatedState, problem, alpha):
    return _aggregated_step(state, problem, alpha, saga_direction)


def sag_step(state: AggregatedState, problem, alpha):
    return _aggregated_step(state, problem, alpha, sag_direction)


def saga_stepsize(L, c=None, n=None):
    """1/(2(c n + L)) when c is known, otherwise 1/(3L)."""
    if c is None:
        return 1.0 / (3.0 * L)
    return 1.0 / (2.0 * (c * n + L))
