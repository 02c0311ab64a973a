"""Coordinate descent with several index rules, and SDCA for ridge regression."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import (CapabilityError, Diverged, InvalidArgument, NumericalError,
                   RandomStream)
from .problems import (LeastSquaresProblem, LogisticProblem,
                       QuadraticEnsembleProblem)

RULES = ("cyclic", "shuffled-cyclic", "uniform", "gauss-southwell", "lipschitz", "gs-lipschitz")
STEP_MODES = ("fixed", "per-coordinate", "exact")


class _Columns:
    """Column access for the data matrix (dense Fortran copy or CSC)."""

    def __init__(self, X):
        if sp.issparse(X):
            self.X = sp.csc_matrix(X)
            self.sparse = True
            self.nnz = np.diff(self.X.indptr)
        else:
            self.X = np.asfortranarray(X)
            self.sparse = False
            self.nnz = np.count_nonzero(self.X, axis=0)

    def col(self, i):
        if self.sparse:
            a, b = self.X.indptr[i], self.X.indptr[i + 1]
            return self.X.indices[a:b], self.X.data[a:b]
        return None, self.X[:, i]

    def dot(self, i, r):
        rows, vals = self.col(i)
        return vals @ (r if rows is None else r[rows])

    def axpy(self, i, a, r):
        rows, vals = self.col(i)
        if rows is None:
            r += a * vals
        else:
            r[rows] += a * vals


@dataclass
class CDState:
    w: np.ndarray
    stream: RandomStream
    cache: np.ndarray            # residual Xw - y, margins Xw, or gradient Qbar w - b
    Li: np.ndarray
    L_hat: float
    rule: str = "uniform"
    k: int = 1
    adp: int = 0                 # feature touches
    perm: np.ndarray = None
    last_index: int = None
    last_alpha: float = None
    last_batch: int = 1
    cols: object = field(default=None, repr=False)
    verify_every: int = 0


def _kind(problem):
    if isinstance(problem, LeastSquaresProblem):
        return "ls"
    if isinstance(problem, LogisticProblem):
        return "logistic"
    if isinstance(problem, QuadraticEnsembleProblem):
        return "quadratic"
    raise CapabilityError(f"{problem.name}: coordinate descent unsupported")


def fresh_cache(problem, w):
    kind = _kind(problem)
    if kind == "ls":
        return problem.X @ w - problem.y
    if kind == "logistic":
        return problem.X @ w
    return problem.Qbar @ w - problem.bbar


def cd_start(problem, w1, seed=0, rule="uniform"):
    if rule not in RULES:
        raise InvalidArgument(f"unknown index rule {rule!r}")
    problem.require_nonempty()
    w = np.array(w1, dtype=np.float64)
    Li = problem.coordinate_lipschitz()
    st = CDState(w, RandomStream(seed), fresh_cache(problem, w), Li, float(Li.max()), rule)
    if _kind(problem) != "quadratic":
        st.cols = _Columns(problem.X)
    st.verify_every = max(problem.n, problem.d)
    return st


def partial_gradient(state, problem, i):
    kind = _kind(problem)
    if kind == "quadratic":
        return state.cache[i]
    if kind == "ls":
        return state.cols.dot(i, state.cache) / problem.n + problem.lam * state.w[i]
    s = problem.dphi(state.cache, problem.y)
    return state.cols.dot(i, s) / problem.n + problem.lam * state.w[i]


def full_gradient(state, problem):
    kind = _kind(problem)
    if kind == "quadratic":
        return state.cache.copy()
    r = state.cache if kind == "ls" else problem.dphi(state.cache, problem.y)
    return np.asarray(problem.X.T @ r).ravel() / problem.n + problem.lam * state.w


def select_index(state, problem):
    d = problem.d
    k = state.k
    rule = state.rule
    if rule == "cyclic":
        return (k - 1) % d
    if rule == "shuffled-cyclic":
        pos = (k - 1) % d
        if pos == 0 or state.perm is None:
            state.perm = state.stream.permutation(k, "cd-shuffle", d)
        return int(state.perm[pos])
    if rule == "uniform":
        return int(state.stream.integers(k, "cd", d, 1)[0])
    if rule == "lipschitz":
        u = state.stream.uniform(k, "cd", 1)[0]
        cdf = np.cumsum(state.Li) / state.Li.sum()
        return int(min(np.searchsorted(cdf, u, side="right"), d - 1))
    g = np.abs(full_gradient(state, problem))
    if rule == "gs-lipschitz":
        g = g / np.sqrt(state.Li)
    return int(np.argmax(g))      # argmax returns the lowest index among ties


def cd_step(state: CDState, problem, rule=None, stepsize="fixed"):
    """Update one coordinate; the cache follows via r <- r + delta x_i."""
    if rule is not None:
        state.rule = rule
    kind = _kind(problem)
    i = select_index(state, problem)
    gi = partial_gradient(state, problem, i)
    if stepsize == "fixed":
        a = 1.0 / state.L_hat
    elif stepsize == "per-coordinate":
        a = 1.0 / state.Li[i]
    elif stepsize == "exact":
        if kind == "logistic":
            raise CapabilityError("exact line search needs a quadratic objective")
        a = 1.0 / state.Li[i]        # Li is the diagonal Hessian entry here
    else:
        raise InvalidArgument(f"unknown stepsize mode {stepsize!r}")
    delta = -a * gi
    if not np.isfinite(delta):
        raise Diverged(f"non-finite coordinate step at iteration {state.k}", state)
    state.w[i] += delta
    if kind == "quadratic":
        state.cache += delta * problem.Qbar[:, i]
        state.adp += problem.d
    else:
        state.cols.axpy(i, delta, state.cache)
        state.adp += int(state.cols.nnz[i])
    state.last_index, state.last_alpha = i, a
    state.k += 1
    if state.verify_every and (state.k - 1) % state.verify_every == 0:
        if not cache_consistent(state, problem):
            raise NumericalError("coordinate-descent cache drifted from its recomputation")
    return state


def cache_error(state, problem):
    ref = fresh_cache(problem, state.w)
    return float(np.linalg.norm(state.cache - ref) / max(1.0, np.linalg.norm(ref)))


def cache_consistent(state, problem, rtol=1e-10):
    return cache_error(state, problem) <= rtol


def cd_rate_bound(c, d, L_hat):
    """Per-step factor 1 - c/(d L_hat) of uniform-random CD with stepsize 1/L_hat."""
    return 1.0 - c / (d * L_hat)


# --- SDCA ---------------------------------------------------------------------

@dataclass
class DualState:
    v: np.ndarray
    w: np.ndarray
    stream: RandomStream
    k: int = 1
    adp: int = 0
    last_alpha: float = None
    last_batch: int = 1


def sdca_start(problem, seed=0):
    if not isinstance(problem, LeastSquaresProblem):
        raise CapabilityError("SDCA is implemented for the squared loss only")
    if not problem.lam > 0:
        raise InvalidArgument("SDCA needs lam > 0")
    problem.require_nonempty()
    return DualState(np.zeros(problem.n), np.zeros(problem.d), RandomStream(seed))


def sdca_step(state: DualState, problem):
    """Exact maximization of the dual in one uniformly chosen coordinate v_j.

    Squared loss l(z) = (z - y)^2 / 2 has conjugate l*(u) = u^2/2 + u y, and
    the coordinate maximizer is
        delta = (y_j - v_j - x_j^T w) / (1 + ||x_j||^2 / (lam n)).
    """
    if not isinstance(problem, LeastSquaresProblem):
        raise CapabilityError("SDCA is implemented for the squared loss only")
    n, lam = problem.n, problem.lam
    j = int(state.stream.integers(state.k, "sdca", n, 1)[0])
    cols, vals = problem.data.row(j)
    if problem.sparse:
        xw = vals @ state.w[cols]
    else:
        vals = problem.X[j]
        xw = vals @ state.w
    xx = vals @ vals
    delta = (problem.y[j] - state.v[j] - xw) / (1.0 + xx / (lam * n))
    state.v[j] += delta
    if problem.sparse:
        state.w[cols] += (delta / (lam * n)) * vals
    else:
        state.w += (delta / (lam * n)) * vals
    state.k += 1
    state.adp += 1
    return state


def primal_from_dual(problem, v):
    return np.asarray(problem.X.T @ v).ravel() / (problem.lam * problem.n)


def dual_value(problem, v):
    w = primal_from_dual(problem, v)
    return float(np.mean(v * problem.y - 0.5 * v * v)) - 0.5 * problem.lam * float(w @ w)


def duality_gap(problem, state):
    return problem.value(state.w) - dual_value(problem, state.v)
