"""Curvature-based solvers: Hessian-free Newton-CG, stochastic L-BFGS,
diagonal curvature scalings and the empirical-Fisher direction."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import (WITH, WITHOUT, CapabilityError, Diverged, InvalidArgument,
                   NumericalError, RandomStream, StepFailure, as_schedule,
                   sample_batch)


# --- conjugate gradient -------------------------------------------------------

@dataclass
class CGResult:
    s: np.ndarray
    status: str          # converged | max-iterations | negative-curvature
    residual: float
    iterations: int      # operator applications


def cg_solve(hv, g, rho=0.1, max_cg=10):
    """Conjugate gradient from s = 0 on H s = -g.

    Stops when ||H s + g|| <= rho ||g||, after max_cg operator applications,
    or when a trial direction has p^T H p <= 0; in the last case the current
    iterate is returned (or -g if that happens on the first direction).
    """
    if not 0 < rho < 1:
        raise InvalidArgument("rho must lie in (0, 1)")
    if max_cg < 1:
        raise InvalidArgument("max_cg must be at least 1")
    g = np.asarray(g, dtype=float)
    s = np.zeros_like(g)
    r = g.copy()
    gn = np.linalg.norm(g)
    if gn == 0:
        return CGResult(s, "converged", 0.0, 0)
    tol = rho * gn
    p = -r
    rr = r @ r
    for it in range(1, max_cg + 1):
        Hp = hv(p)
        if not np.all(np.isfinite(Hp)):
            raise NumericalError("operator returned non-finite values")
        curv = p @ Hp
        if curv <= 0:
            if it == 1:
                return CGResult(-g, "negative-curvature", gn, it)
            return CGResult(s, "negative-curvature", float(np.sqrt(rr)), it)
        a = rr / curv
        s = s + a * p
        r = r + a * Hp
        rr_new = r @ r
        res = np.sqrt(rr_new)
        if res <= tol:
            return CGResult(s, "converged", float(res), it)
        p = -r + (rr_new / rr) * p
        rr = rr_new
    return CGResult(s, "max-iterations", float(np.sqrt(rr)), max_cg)


def armijo_backtrack(f, w, s, slope, eta=1e-4, gamma=0.5, max_backtracks=60, f0=None):
    """Largest alpha in {1, gamma, gamma^2, ...} with f(w + alpha s) <= f(w) + eta alpha slope."""
    f0 = f(w) if f0 is None else f0
    a = 1.0
    for _ in range(max_backtracks + 1):
        if f(w + a * s) <= f0 + eta * a * slope:
            return a
        a *= gamma
    raise StepFailure(f"line search failed after {max_backtracks} backtracks")


# --- Newton-CG ----------------------------------------------------------------

@dataclass
class SolverState:
    w: np.ndarray
    stream: RandomStream
    k: int = 1
    adp: int = 0
    last_alpha: float = None
    last_batch: int = None
    info: dict = field(default_factory=dict)

    @classmethod
    def start(cls, w1, seed=0):
        return cls(np.array(w1, dtype=np.float64), RandomStream(seed))


def curvature_operator(problem, w, batch, kind="hessian"):
    if kind == "hessian":
        return lambda v: problem.hessian_vector_product(w, batch, v)
    if kind == "gauss-newton":
        return lambda v: problem.gauss_newton_vector_product(w, batch, v, "plain")
    if kind == "generalized-gn":
        return lambda v: problem.gauss_newton_vector_product(w, batch, v, "generalized")
    if kind == "fisher":
        return lambda v: problem.gauss_newton_vector_product(w, batch, v, "log-loss-fisher")
    raise InvalidArgument(f"unknown curvature operator {kind!r}")


def newton_batches(state, problem, batch_size, hess_batch_size):
    """S_k (without replacement) and S_k^H as a prefix of S_k."""
    n = problem.n
    b = min(batch_size, n) if batch_size else n
    bh = min(hess_batch_size or b, b)
    if b == n:
        idx = np.arange(n)
        S = None
    else:
        S = sample_batch(state.stream, state.k, b, WITHOUT, n).indices
        idx = S
    SH = None if (S is None and bh == n) else idx[:bh]
    return S, SH, b, bh


def newton_cg_step(state: SolverState, problem, batch_size=None, hess_batch_size=None,
                   rho=0.1, max_cg=10, eta=1e-4, gamma=0.5, operator="hessian",
                   cost_factor=1):
    """Subsampled inexact Newton step with Armijo backtracking on f_S."""
    problem.require_nonempty()
    S, SH, b, bh = newton_batches(state, problem, batch_size, hess_batch_size)
    w = state.w
    g = problem.batch_gradient(w, S)
    op = curvature_operator(problem, w, SH, operator)
    res = cg_solve(op, g, rho, max_cg)
    s = res.s
    slope = float(g @ s)
    fS = (lambda x: problem.batch_value(x, S))
    if slope >= 0:
        s, slope = -g, -float(g @ g)
    try:
        a = armijo_backtrack(fS, w, s, slope, eta, gamma)
    except StepFailure:
        state.info["failure"] = f"iteration {state.k}: Armijo search exhausted"
        raise
    w_new = w + a * s
    if not np.all(np.isfinite(w_new)):
        raise Diverged(f"non-finite iterate at iteration {state.k}", state)
    state.w = w_new
    state.k += 1
    state.adp += b + res.iterations * cost_factor * bh
    state.last_alpha, state.last_batch = a, b
    state.info["cg"] = res
    return state


# --- limited-memory BFGS ------------------------------------------------------

class CurvaturePairStore:
    """At most m pairs (s, v) with s^T v > 0, eldest evicted first."""

    def __init__(self, m=10):
        if m < 1:
            raise InvalidArgument("memory must be at least 1")
        self.m = m
        self.pairs = deque(maxlen=m)
        self.skipped = 0

    def __len__(self):
        return len(self.pairs)

    def add(self, s, v):
        sv = float(s @ v)
        if not sv > 0 or not np.isfinite(sv):
            self.skipped += 1
            return False
        self.pairs.append((np.array(s, float), np.array(v, float), 1.0 / sv))
        return True

    def clear(self):
        self.pairs.clear()

    def scaling(self):
        if not self.pairs:
            return 1.0
        s, v, _ = self.pairs[-1]
        return float(s @ v) / float(v @ v)


def two_loop_direction(store: CurvaturePairStore, g, gamma=None):
    """H_k g for the L-BFGS operator over gamma*I (default gamma = s^T v / v^T v of the last pair)."""
    q = np.array(g, dtype=float)
    if gamma is None:
        gamma = store.scaling()
    if not store.pairs:
        return q if gamma == 1.0 else gamma * q
    alphas = []
    for s, v, rho in reversed(store.pairs):
        a = rho * (s @ q)
        q -= a * v
        alphas.append(a)
    r = gamma * q
    for (s, v, rho), a in zip(store.pairs, reversed(alphas)):
        b = rho * (v @ r)
        r += (a - b) * s
    return r


@dataclass
class SQNState(SolverState):
    store: CurvaturePairStore = None
    skipped: int = 0

    @classmethod
    def start(cls, w1, seed=0, memory=10):
        st = cls(np.array(w1, dtype=np.float64), RandomStream(seed))
        st.store = CurvaturePairStore(memory)
        return st


def collect_pair(state, problem, strategy, w_old, w_new, batch=None, hess_batch_size=None,
                 g_old=None):
    """Curvature pair for the step w_old -> w_new; returns (s, v, cost) or None if skipped.

    online: v = grad f_S(w_new) - grad f_S(w_old) on the same sample (so any
    oracle noise drawn for that sample cancels).
    hessian-action: v = (subsampled Hessian at w_old) s on a fresh sample S^H.
    """
    s = w_new - w_old
    if strategy == "online":
        if g_old is None:
            g_old = problem.batch_gradient(w_old, batch)
        v = problem.batch_gradient(w_new, batch) - g_old
        cost = batch.size if batch is not None else problem.n
    elif strategy == "hessian-action":
        bh = hess_batch_size or problem.n
        if bh >= problem.n:
            SH = None
            bh = problem.n
        else:
            SH = sample_batch(state.stream, state.k, bh, WITHOUT, problem.n, tag="hess-batch")
        v = problem.hessian_vector_product(w_old, SH, s)
        cost = bh
    else:
        raise InvalidArgument(f"unknown pair strategy {strategy!r}")
    ok = state.store.add(s, v)
    if not ok:
        state.skipped += 1
        return None, cost
    return (s, v), cost


def sqn_step(state: SQNState, problem, schedule, batch_size=1, cadence=1, strategy="online",
             hess_batch_size=None, mode=WITH):
    """w <- w - alpha H_k g(w_k, xi_k); refresh the pair store every ``cadence`` iterations."""
    if cadence < 1:
        raise InvalidArgument("cadence must be at least 1")
    problem.require_nonempty()
    a = as_schedule(schedule).at(state.k)
    batch = sample_batch(state.stream, state.k, batch_size, mode, problem.n)
    g = problem.sample_gradient(state.w, batch, state.stream)
    if not np.all(np.isfinite(g)):
        raise Diverged(f"non-finite gradient at iteration {state.k}", state)
    d = two_loop_direction(state.store, g)
    w_new = state.w - a * d
    if not np.all(np.isfinite(w_new)):
        raise Diverged(f"non-finite iterate at iteration {state.k}", state)
    cost = batch_size
    if state.k % cadence == 0:
        if strategy == "online":
            g_clean = problem.batch_gradient(state.w, batch)
            _, c = collect_pair(state, problem, "online", state.w, w_new, batch, g_old=g_clean)
        else:
            _, c = collect_pair(state, problem, strategy, state.w, w_new,
                                hess_batch_size=hess_batch_size)
        cost += c
    state.w = w_new
    state.k += 1
    state.adp += cost
    state.last_alpha, state.last_batch = a, batch_size
    return state


def lbfgs_batch_step(state: SQNState, problem, eta=1e-4, gamma=0.5):
    """Deterministic L-BFGS with Armijo backtracking.

    Each trial point costs one full (value, gradient) evaluation, i.e. n
    accessed data points; the gradient at the accepted point is reused.
    """
    n = problem.n
    if "g" not in state.info:
        state.info["g"] = problem.gradient(state.w)
        state.info["f"] = problem.value(state.w)
        state.adp += n
    g, f0 = state.info["g"], state.info["f"]
    d = -two_loop_direction(state.store, g)
    slope = float(g @ d)
    if slope >= 0:
        state.store.clear()
        d, slope = -g, -float(g @ g)
    a = 1.0 if len(state.store) else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
    for _ in range(61):
        w_try = state.w + a * d
        f_try = problem.value(w_try)
        state.adp += n
        if f_try <= f0 + eta * a * slope:
            break
        a *= gamma
    else:
        raise StepFailure(f"line search failed at iteration {state.k}")
    g_new = problem.gradient(w_try)
    state.store.add(w_try - state.w, g_new - g)
    state.w = w_try
    state.info["g"], state.info["f"] = g_new, f_try
    state.k += 1
    state.last_alpha, state.last_batch = a, n
    return state


# --- diagonal scalings --------------------------------------------------------

@dataclass
class DiagonalState(SolverState):
    G: np.ndarray = None        # curvature (gn, ratio-sum) or inverse curvature (ratio-average)
    skipped: int = 0

    @classmethod
    def start(cls, w1, seed=0, init=0.0):
        w1 = np.array(w1, dtype=np.float64)
        st = cls(w1, RandomStream(seed))
        st.G = np.full_like(w1, init)
        return st


def default_interval(problem):
    return 1e-3 * problem.L, 1e3 * problem.L


def diagonal_curvature_step(state: DiagonalState, problem, variant="gn", alpha=0.1,
                            mu_reg=1e-8, decay=0.1, interval=None, batch_size=1, mode=WITH):
    """Per-coordinate scaled SG step.

    gn:             G <- (1-decay) G + decay diag(GN on the batch);  w_i -= alpha g_i/(G_i + mu)
    ratio-average:  H <- (1-decay) H + decay clamp(s_i/v_i);          w_i -= alpha H_i g_i
    ratio-sum:      G <- G + clamp(v_i/s_i);                          w_i -= alpha g_i/G_i
    Ratios come from same-sample gradient differences after the step; the
    interval [lo, hi] bounds v_i/s_i, so s_i/v_i is clamped to [1/hi, 1/lo].
    """
    a = as_schedule(alpha).at(state.k)
    batch = sample_batch(state.stream, state.k, batch_size, mode, problem.n)
    g = problem.sample_gradient(state.w, batch, state.stream)
    if not np.all(np.isfinite(g)):
        raise Diverged(f"non-finite gradient at iteration {state.k}", state)
    cost = batch_size
    if variant == "gn":
        G = (1.0 - decay) * state.G + decay * problem.curvature_diagonal(state.w, batch)
        w_new = state.w - a * g / (G + mu_reg)
        cost *= 2
    elif variant in ("ratio-average", "ratio-sum"):
        lo, hi = interval if interval is not None else default_interval(problem)
        if not 0 < lo <= hi < np.inf:
            raise InvalidArgument("projection interval must satisfy 0 < lo <= hi < inf")
        G = state.G
        if variant == "ratio-average":
            w_new = state.w - a * G * g
        else:
            w_new = state.w - a * g / G
    else:
        raise InvalidArgument(f"unknown diagonal variant {variant!r}")
    if not np.all(np.isfinite(w_new)):
        raise Diverged(f"non-finite iterate at iteration {state.k}", state)
    if variant != "gn":
        s = w_new - state.w
        v = problem.batch_gradient(w_new, batch) - problem.batch_gradient(state.w, batch)
        cost += batch_size
        ok = (s != 0) & (v != 0)
        state.skipped += int(np.sum(~ok))
        G = G.copy()
        with np.errstate(divide="ignore", invalid="ignore"):
            if variant == "ratio-average":
                r = np.clip(s / v, 1.0 / hi, 1.0 / lo)
                G[ok] = (1.0 - decay) * G[ok] + decay * r[ok]
            else:
                r = np.clip(v / s, lo, hi)
                G[ok] = G[ok] + r[ok]
    state.G = G
    state.w = w_new
    state.k += 1
    state.adp += cost
    state.last_alpha, state.last_batch = a, batch_size
    return state


def start_diagonal(problem, w1, variant, seed=0):
    """Initial estimates: zero for gn, the L bound for ratio-sum, 1/L for ratio-average."""
    init = {"gn": 0.0, "ratio-sum": problem.L, "ratio-average": 1.0 / problem.L}[variant]
    return DiagonalState.start(w1, seed, init)


# --- empirical Fisher ---------------------------------------------------------

def empirical_fisher_direction(problem, w, batch, mu_reg=1e-8, g=None, rtol=1e-10):
    """Solve (F~ + mu I) p = g with F~ v = average of grad l_i (grad l_i^T v)."""
    if not hasattr(problem, "fisher_vector_product"):
        raise CapabilityError(f"{problem.name}: empirical Fisher needs a log-loss problem")
    if g is None:
        g = problem.batch_gradient(w, batch)
    op = lambda v: problem.fisher_vector_product(w, batch, v) + mu_reg * v
    res = cg_solve(op, -np.asarray(g, float), rho=rtol, max_cg=4 * problem.d + 10)
    return res.s
