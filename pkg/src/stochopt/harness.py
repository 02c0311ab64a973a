"""Theorem-bound checks, rate estimation from traces, and the ADP budget study.

Every check returns :class:`TheoremCheck` records holding the constants it
used, the seeds, the bound and the empirical curve.  Seeds run in any order
(optionally on worker threads) but results are always reduced in sorted-seed
order, so verdicts are reproducible bit for bit.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coordinate import cache_error, cd_rate_bound, cd_start, cd_step
from .core import (Diminishing, Fixed, InvalidArgument, RandomStream, StepFailure,
                   sample_batch)
from .noise_reduction import (AggregatedState, DynamicSamplingPolicy, DynamicState,
                              GradientTable, SVRGState, admissible_tau_max,
                              dynamic_sampling_step, noise_reduction_rate, saga_direction,
                              saga_step, saga_stepsize, svrg_direction, svrg_outer, svrg_rate)
from .problems import (CompositeL1Problem, Dataset, DoubleWellProblem, LeastSquaresProblem,
                       LinearModelProblem, LogisticProblem, identity_quadratic,
                       make_classification, make_regression, spread_quadratic_ensemble)
from .regularized import (OrthantState, build_model, gradient_projection_split_step,
                          ista_step, orthant_step, prox_newton_step, split)
from .second_order import (CurvaturePairStore, SolverState, SQNState, cg_solve,
                           lbfgs_batch_step, newton_cg_step, two_loop_direction)
from .sg_family import SGState, sg_step

DEFAULT_SEEDS = tuple(range(1, 21))
MEAN_SLACK = 1.1
TAIL_SLACK = 1.2


# --- rate estimation ----------------------------------------------------------

@dataclass
class RateEstimate:
    kind: str               # linear | sublinear
    rate: float             # contraction (linear) or decay exponent p in C/k^p (sublinear)
    constant: float         # intercept exp(a) of the fit; for sublinear, C with p fixed to 1
    residual: float         # RMS residual of the log-space fit
    window: tuple


def estimate_rate(trace, window=None, kind="linear", f_star=0.0, ks=None):
    """Least-squares fit of log(gap) against k (linear) or log k (sublinear).

    ``trace`` is a core.Trace (gaps are fval - f_star at traced records) or
    an array of gaps.  Nonpositive gaps truncate the data to the valid prefix.
    """
    if hasattr(trace, "records"):
        recs = [r for r in trace.records if r.fval is not None]
        k = np.array([r.k for r in recs], float)
        gap = np.array([r.fval for r in recs], float) - f_star
    else:
        gap = np.asarray(trace, float)
        k = np.arange(1, len(gap) + 1, dtype=float) if ks is None else np.asarray(ks, float)
    if window is not None:
        lo, hi = window
        keep = (k >= lo) & (k <= hi)
        k, gap = k[keep], gap[keep]
    bad = np.flatnonzero(~(gap > 0))
    if bad.size:
        k, gap = k[:bad[0]], gap[:bad[0]]
    if len(gap) < 10:
        raise InvalidArgument("need at least 10 positive gap records")
    y = np.log(gap)
    if kind == "linear":
        A = np.column_stack([k, np.ones_like(k)])
        (b, a), *_ = np.linalg.lstsq(A, y, rcond=None)
        res = y - A @ np.array([b, a])
        return RateEstimate("linear", float(np.exp(b)), float(np.exp(a)),
                            float(np.sqrt(np.mean(res ** 2))), (k[0], k[-1]))
    if kind == "sublinear":
        A = np.column_stack([-np.log(k), np.ones_like(k)])
        (p, a), *_ = np.linalg.lstsq(A, y, rcond=None)
        res = y - A @ np.array([p, a])
        c1 = float(np.exp(np.mean(y + np.log(k))))
        return RateEstimate("sublinear", float(p), c1, float(np.sqrt(np.mean(res ** 2))),
                            (k[0], k[-1]))
    raise InvalidArgument(f"unknown rate kind {kind!r}")


# --- verdict records ----------------------------------------------------------

@dataclass
class TheoremCheck:
    """One verdict: empirical values against [lower, slack*bound] at checkpoints."""
    name: str
    claim: str
    constants: dict
    seeds: tuple
    checkpoints: np.ndarray
    bound: np.ndarray
    empirical: np.ndarray
    slack: float = 1.0
    lower: float = None
    lower_open: bool = False
    curves: list = field(default_factory=list, repr=False)   # (solver, seed, k, adp, value)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.checkpoints = np.atleast_1d(np.asarray(self.checkpoints, float))
        self.bound = np.atleast_1d(np.asarray(self.bound, float))
        self.empirical = np.atleast_1d(np.asarray(self.empirical, float))

    @property
    def upper(self):
        return self.slack * self.bound

    @property
    def margins(self):
        up = self.upper - self.empirical
        if self.lower is None:
            return up
        lo = self.empirical - self.lower
        return np.minimum(up, lo)

    @property
    def passed(self):
        ok = np.all(np.isfinite(self.empirical)) and np.all(self.empirical <= self.upper)
        if self.lower is not None:
            ok = ok and np.all(self.empirical > self.lower if self.lower_open
                               else self.empirical >= self.lower)
        return bool(ok)

    @property
    def margin(self):
        m = self.margins
        return float(np.nanmin(m)) if m.size else math.nan

    def worst(self):
        i = int(np.nanargmin(self.margins)) if self.margins.size else 0
        return self.checkpoints[i], self.bound[i], self.empirical[i]

    def verdict_line(self):
        at, b, e = self.worst()
        rng = f"({self.lower:.6g}, " if self.lower_open else \
            (f"[{self.lower:.6g}, " if self.lower is not None else "[-inf, ")
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name}: empirical {e:.6g} in "
                f"{rng}{self.slack:g}*{b:.6g}] at {at:g}; margin {self.margin:.3g}")


def _upper_check(name, claim, constants, seeds, checkpoints, bound, empirical, slack=1.0,
                 **kw):
    return TheoremCheck(name, claim, constants, tuple(seeds), checkpoints, bound, empirical,
                        slack, **kw)


def _interval_check(name, claim, constants, seeds, value, lo, hi, lower_open=False, at=0,
                    **kw):
    return TheoremCheck(name, claim, constants, tuple(seeds), [at], [hi], [value], 1.0, lo,
                        lower_open, **kw)


def map_seeds(fn, seeds, threads=1):
    """Run ``fn(seed)`` for every seed; results come back in sorted-seed order."""
    seeds = sorted(int(s) for s in seeds)
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            out = list(ex.map(fn, seeds))
    else:
        out = [fn(s) for s in seeds]
    return seeds, out


def _mean(rows):
    """Mean over seeds with a fixed summation order."""
    acc = np.zeros_like(np.asarray(rows[0], float))
    for r in rows:
        acc = acc + np.asarray(r, float)
    return acc / len(rows)


# --- SG on strongly convex quadratics -----------------------------------------

def _admissible_fixed(problem, alpha, mu=1.0, mu_G=1.0, M_V=0.0):
    M_G = M_V + mu_G ** 2
    limit = mu / (problem.L * M_G)
    if not 0 < alpha <= limit * (1 + 1e-12):
        raise InvalidArgument(f"stepsize {alpha} outside (0, mu/(L M_G)] = (0, {limit:g}]")
    return limit


def sg_gap_curve(problem, schedule, w1, seed, horizon, record, tail=0, project=None):
    """Run SG for ``horizon`` steps; gaps of w_k at the ``record`` indices (w_1 is k=1),
    plus the mean gap over the last ``tail`` iterates w_{K-tail+2..K+1}."""
    st = SGState.start(w1, seed)
    record = set(int(k) for k in record)
    rec = {}
    acc = 0.0
    for k in range(1, horizon + 2):
        if k in record:
            rec[k] = problem.gap(st.w)
        if tail and k > horizon + 1 - tail:
            acc += problem.gap(st.w)
        if k <= horizon:
            sg_step(st, problem, schedule, project=project)
    return rec, (acc / tail if tail else math.nan), st


def check_fixed_stepsize_gap(problem=None, alpha=0.5, seeds=DEFAULT_SEEDS, horizon=4000,
                             tail=3000, w1=None, slack=TAIL_SLACK, threads=1, halving=True,
                             noise_free_tol=1e-12):
    """Tail-mean gap of fixed-stepsize SG against alpha L M / (2 c mu), and the
    halving property of that steady state."""
    problem = identity_quadratic(10, 1.0) if problem is None else problem
    w1 = np.ones(problem.d) if w1 is None else np.asarray(w1, float)
    limit = _admissible_fixed(problem, alpha)
    c, L, M, mu = problem.c, problem.L, problem.noise, 1.0
    consts = dict(c=c, L=L, M=M, mu=mu, mu_G=1.0, M_G=1.0, alpha=alpha, alpha_max=limit,
                  horizon=horizon, tail=tail, contraction=1 - alpha * c * mu)
    rec_ks = _log_grid(horizon + 1)
    checks = []

    def runner(a):
        def one(seed):
            return sg_gap_curve(problem, Fixed(a), w1, seed, horizon, rec_ks, tail)[:2]
        seeds_s, out = map_seeds(one, seeds, threads)
        curves = [("sg-fixed", s, k, k - 1, r[0][k]) for s, r in zip(seeds_s, out)
                  for k in sorted(r[0])]
        return seeds_s, _mean([r[1] for r in out]), _mean([[r[0][k] for k in rec_ks] for r in out]), curves

    seeds_s, tail_mean, mean_curve, curves = runner(alpha)
    if M == 0:
        checks.append(_upper_check("sg-fixed/noise-free-linear", "noise-free SG decays linearly",
                                   consts, seeds_s, [horizon + 1], [noise_free_tol],
                                   [mean_curve[-1]], 1.0, curves=curves))
        return checks
    bound = alpha * L * M / (2 * c * mu)
    checks.append(_upper_check("sg-fixed/tail-gap", "tail-mean gap within the steady-state bound",
                               consts, seeds_s, [horizon], [bound], [tail_mean], slack,
                               lower=0.0, lower_open=True, curves=curves,
                               details={"mean_curve": dict(zip(rec_ks, mean_curve))}))
    if halving:
        _, tail_half, _, curves_h = runner(alpha / 2)
        ratio = tail_half / tail_mean
        checks.append(_interval_check("sg-fixed/halving", "halving alpha scales the tail mean",
                                      dict(consts, alpha_half=alpha / 2, tail_half=tail_half),
                                      seeds_s, ratio, 0.4, 0.6, at=horizon,
                                      curves=[("sg-fixed-half",) + r[1:] for r in curves_h]))
    return checks


def diminishing_nu(beta, gamma, c, L, M, gap1, mu=1.0):
    return max(beta ** 2 * L * M / (2 * (beta * c * mu - 1)), (gamma + 1) * gap1)


def check_diminishing_rate(problem=None, beta=2.0, gamma=1.0, seeds=DEFAULT_SEEDS,
                           checkpoints=(100, 1000, 10_000, 100_000), w1=None,
                           slack=MEAN_SLACK, threads=1):
    """Mean gap of SG with alpha_k = beta/(gamma+k) against nu/(gamma+k)."""
    problem = identity_quadratic(10, 1.0) if problem is None else problem
    w1 = np.ones(problem.d) if w1 is None else np.asarray(w1, float)
    c, L, M, mu = problem.c, problem.L, problem.noise, 1.0
    if not beta > 1 / (c * mu):
        raise InvalidArgument("need beta > 1/(c mu)")
    _admissible_fixed(problem, beta / (gamma + 1))
    gap1 = problem.gap(w1)
    nu = diminishing_nu(beta, gamma, c, L, M, gap1, mu)
    ks = sorted(int(k) for k in checkpoints)
    rec_ks = sorted(set(_log_grid(ks[-1])) | set(ks))
    sched = Diminishing(beta, gamma)

    def one(seed):
        return sg_gap_curve(problem, sched, w1, seed, ks[-1] - 1, rec_ks)[0]

    seeds_s, out = map_seeds(one, seeds, threads)
    emp = _mean([[r[k] for k in ks] for r in out])
    bound = np.array([nu / (gamma + k) for k in ks])
    curves = [("sg-diminishing", s, k, k - 1, r[k]) for s, r in zip(seeds_s, out) for k in sorted(r)]
    consts = dict(c=c, L=L, M=M, mu=mu, beta=beta, gamma=gamma, gap1=gap1, nu=nu)
    if M == 0:
        scaled = emp * (gamma + np.array(ks))
        return [_upper_check("sg-diminishing/noise-free", "gap*(gamma+k) tends to zero", consts,
                             seeds_s, ks, np.full(len(ks), scaled[0]), scaled, 1.0, curves=curves)]
    return [_upper_check("sg-diminishing/rate", "mean gap below nu/(gamma+k)", consts, seeds_s,
                         ks, bound, emp, slack, curves=curves)]


def _log_grid(K, per_decade=10):
    """Roughly log-spaced iteration indices 1..K (always including 1 and K)."""
    g = np.unique(np.round(np.logspace(0, math.log10(max(K, 1)),
                                       per_decade * max(1, int(math.log10(max(K, 10)))) + 1)))
    return sorted(set(int(x) for x in g) | {1, int(K)})


# --- nonconvex ----------------------------------------------------------------

def nonconvex_run(problem, schedule, w1, seed, K, record):
    """Running sums of ||grad F(w_k)||^2 and alpha_k ||grad F(w_k)||^2 over k = 1..K."""
    st = SGState.start(w1, seed)
    record = set(record)
    plain = weighted = A = 0.0
    out = {}
    for k in range(1, K + 1):
        g = problem.gradient(st.w)
        gg = float(g @ g)
        a = schedule.at(k)
        plain += gg
        weighted += a * gg
        A += a
        if k in record:
            out[k] = (plain / k, weighted / A)
        sg_step(st, problem, schedule, project=problem.project)
    return out, st.projections


def check_nonconvex_average_gradients(problem=None, alpha=None, beta=None, gamma=1e4,
                                      seeds=DEFAULT_SEEDS, K=100_000, early=1000, w1=(2.0, 2.0),
                                      slack=MEAN_SLACK, threads=1):
    """Average squared gradients of SG on a nonconvex function with noise.

    Fixed stepsize: mean of (1/K) sum ||grad F||^2 against
    alpha L M / mu + 2 (F(w_1) - F_inf) / (K mu alpha).  Diminishing: the
    alpha-weighted average at K must be at most 0.1x its value at ``early``.
    """
    problem = DoubleWellProblem(0.1) if problem is None else problem
    L, M, mu = problem.L, problem.noise, 1.0
    alpha = 1.0 / L if alpha is None else alpha
    beta = (gamma + 1) / L if beta is None else beta
    _admissible_fixed(problem, alpha)
    _admissible_fixed(problem, beta / (gamma + 1))
    w1 = np.asarray(w1, float)
    gap1 = problem.value(w1) - problem.f_inf
    rec = sorted(set(_log_grid(K)) | {early, K})
    checks = []

    seeds_s, fixed = map_seeds(lambda s: nonconvex_run(problem, Fixed(alpha), w1, s, K, rec),
                               seeds, threads)
    emp = _mean([r[0][K][0] for r in fixed])
    bound = alpha * L * M / mu + 2 * gap1 / (K * mu * alpha)
    proj = sum(r[1] for r in fixed)
    curves = [("nonconvex-fixed", s, k, k, r[0][k][0]) for s, r in zip(seeds_s, fixed)
              for k in sorted(r[0])]
    checks.append(_upper_check("nonconvex/fixed-average", "average squared gradient bound",
                               dict(L=L, M=M, mu=mu, alpha=alpha, F1_minus_Finf=gap1, K=K,
                                    projections=proj),
                               seeds_s, [K], [bound], [emp], slack, curves=curves))

    sched = Diminishing(beta, gamma)
    seeds_s, dim = map_seeds(lambda s: nonconvex_run(problem, sched, w1, s, K, rec), seeds, threads)
    w_early = _mean([r[0][early][1] for r in dim])
    w_final = _mean([r[0][K][1] for r in dim])
    proj = sum(r[1] for r in dim)
    curves = [("nonconvex-diminishing", s, k, k, r[0][k][1]) for s, r in zip(seeds_s, dim)
              for k in sorted(r[0])]
    checks.append(_upper_check("nonconvex/diminishing-decay", "weighted average decays",
                               dict(L=L, M=M, beta=beta, gamma=gamma, early=early, K=K,
                                    weighted_early=w_early, projections=proj),
                               seeds_s, [K], [0.1 * w_early], [w_final], 1.0, curves=curves))
    return checks


# --- noise reduction ----------------------------------------------------------

def check_noise_reduction(problem=None, alpha=0.5, tau=4.0 / 3.0, seeds=DEFAULT_SEEDS, K=60,
                          window=10, eps=1e-5, w1=None, allowance=0.05, threads=1):
    """Dynamic sampling with geometric batch growth: per-iteration contraction of
    the mean gap and the ADP needed to reach eps versus eps/2."""
    problem = identity_quadratic(10, 1.0) if problem is None else problem
    c, mu = problem.c, 1.0
    _admissible_fixed(problem, alpha)
    tmax = admissible_tau_max(alpha, c, mu)
    if not 1 < tau <= tmax * (1 + 1e-12):
        raise InvalidArgument(f"tau must lie in (1, {tmax:g}]")
    w1 = np.ones(problem.d) if w1 is None else np.asarray(w1, float)
    policy = DynamicSamplingPolicy(tau)

    def one(seed):
        st = DynamicState.start(w1, seed)
        gaps, adp = [problem.gap(st.w)], [0]
        for _ in range(K):
            dynamic_sampling_step(st, problem, alpha, policy)
            gaps.append(problem.gap(st.w))
            adp.append(st.adp)
        return np.array(gaps), np.array(adp)

    seeds_s, out = map_seeds(one, seeds, threads)
    mean_gap = _mean([r[0] for r in out])
    adp = out[0][1]
    ks = np.arange(1, K + 2)
    est = estimate_rate(mean_gap, window=(window, K + 1), ks=ks)
    bound = noise_reduction_rate(alpha, c, tau, mu)
    curves = [("dynamic-sampling", s, int(k), int(a), float(g)) for s, r in zip(seeds_s, out)
              for k, g, a in zip(ks, r[0], r[1])]
    consts = dict(c=c, mu=mu, alpha=alpha, tau=tau, tau_max=tmax, rate_bound=bound,
                  allowance=allowance, window=(window, K + 1), fit_residual=est.residual)
    checks = [_upper_check("noise-reduction/contraction", "mean-gap contraction",
                           consts, seeds_s, [K + 1], [bound + allowance], [est.rate], 1.0,
                           curves=curves)]

    def adp_to(target):
        hit = np.flatnonzero(mean_gap <= target)
        if not hit.size:
            raise InvalidArgument(f"target {target:g} not reached within {K} iterations")
        return int(adp[hit[0]])

    a1, a2 = adp_to(eps), adp_to(eps / 2)
    checks.append(_interval_check("noise-reduction/work", "ADP to eps/2 over ADP to eps",
                                  dict(eps=eps, adp_eps=a1, adp_half=a2), seeds_s, a2 / a1,
                                  1.5, 3.0, at=eps))
    return checks


# --- variance reduction -------------------------------------------------------

def default_logistic(n=1000, d=50, lam=1e-2, seed=3):
    return LogisticProblem(make_classification(n, d, seed=seed), lam)


def check_variance_reduced(problem=None, svrg_alpha=None, svrg_m=2000, saga_alpha=None,
                           epochs=100, tol=1e-10, seed=1, enum_n=5):
    """SVRG and SAGA reach gap <= tol within the epoch budget; both directions are
    unbiased, verified by enumerating every index on a tiny instance."""
    problem = default_logistic() if problem is None else problem
    n, d = problem.n, problem.d
    Lc, c = problem.L_component, problem.c
    a_svrg = 0.1 / Lc if svrg_alpha is None else svrg_alpha
    rho = svrg_rate(a_svrg, svrg_m, c, Lc)
    if not rho < 1:
        raise InvalidArgument(f"SVRG pair (alpha, m) is not valid: rho = {rho:g}")
    a_saga = saga_stepsize(Lc) if saga_alpha is None else saga_alpha
    budget = epochs * n
    checks = []

    st = SVRGState.start(np.zeros(d), seed)
    curve = [("svrg", seed, 0, 0, problem.gap(st.w))]
    while st.adp + n + 2 * svrg_m <= budget:
        svrg_outer(st, problem, a_svrg, svrg_m)
        curve.append(("svrg", seed, st.k - 1, st.adp, problem.gap(st.w)))
    checks.append(_upper_check("svrg-saga/svrg-gap", "SVRG gap within the epoch budget",
                               dict(alpha=a_svrg, m=svrg_m, rho=rho, L=Lc, c=c, epochs=epochs),
                               (seed,), [st.adp], [tol], [max(curve[-1][-1], 0.0)], 1.0,
                               curves=curve))

    st = AggregatedState.start(problem, np.zeros(d), seed)
    curve = [("saga", seed, 1, st.adp, problem.gap(st.w))]
    while st.adp < budget:
        saga_step(st, problem, a_saga)
        if st.adp % n == 0:
            curve.append(("saga", seed, st.k, st.adp, problem.gap(st.w)))
    checks.append(_upper_check("svrg-saga/saga-gap", "SAGA gap within the epoch budget",
                               dict(alpha=a_saga, L=Lc, epochs=epochs, table_ok=st.table.verify()),
                               (seed,), [st.adp], [tol], [max(curve[-1][-1], 0.0)], 1.0,
                               curves=curve))
    checks.append(check_unbiased_directions(enum_n, seed=seed))
    return checks


def check_unbiased_directions(n=5, d=3, seed=1, tol=1e-12):
    """Average of the SVRG and SAGA directions over all n indices equals grad F."""
    prob = LogisticProblem(make_classification(n, d, seed=seed + 100), 0.1)
    rs = RandomStream(seed)
    w = rs.normal_block(0, "w", d)
    w_snap = rs.normal_block(0, "w-snap", d)
    full = prob.gradient(w_snap)
    avg = sum(svrg_direction(prob, w, w_snap, full, i) for i in range(n)) / n
    err_svrg = float(np.linalg.norm(avg - prob.gradient(w)))
    tab = GradientTable(prob)
    for j in range(n):
        old = rs.normal_block(j, "table-point", d)
        val, vec = tab.fresh(old, j)
        tab.put(j, val, vec)
    dirs = [saga_direction(tab, prob, w, j, tab.fresh(w, j)[1]) for j in range(n)]
    err_saga = float(np.linalg.norm(sum(dirs) / n - prob.gradient(w)))
    return _upper_check("svrg-saga/unbiased", "directions unbiased by enumeration",
                        dict(n=n, d=d, err_svrg=err_svrg, err_saga=err_saga), (seed,),
                        [0, 1], [tol, tol], [err_svrg, err_saga], 1.0)


# --- second-order oracles -----------------------------------------------------

def dense_bfgs_inverse(pairs, gamma, d):
    """H <- (I - rho s v^T) H (I - rho v s^T) + rho s s^T from H = gamma I."""
    H = gamma * np.eye(d)
    I = np.eye(d)
    for s, v in pairs:
        rho = 1.0 / (s @ v)
        E = I - rho * np.outer(s, v)
        H = E @ H @ E.T + rho * np.outer(s, s)
    return H


def check_hessian_products(problems=None, seed=1, trials=5, eps=1e-5, tol=1e-5):
    """Hessian-vector products against central differences of the gradient."""
    if problems is None:
        problems = [default_logistic(200, 20),
                    LeastSquaresProblem(make_regression(100, 20, seed=2), 0.01),
                    DoubleWellProblem()]
    rs = RandomStream(seed)
    errs = []
    for p_i, prob in enumerate(problems):
        for t in range(trials):
            w = rs.normal_block(p_i * trials + t, "hvp-w", prob.d)
            v = rs.normal_block(p_i * trials + t, "hvp-v", prob.d)
            hv = prob.hessian_vector_product(w, None, v)
            fd = (prob.gradient(w + eps * v) - prob.gradient(w - eps * v)) / (2 * eps)
            errs.append(float(np.linalg.norm(hv - fd) / max(np.linalg.norm(fd), 1e-300)))
    return _upper_check("oracles/hvp-finite-difference", "Hessian-vector products match FD",
                        dict(eps=eps, trials=trials, problems=[p.name for p in problems]),
                        (seed,), np.arange(len(errs)), np.full(len(errs), tol), errs, 1.0)


def check_cg_dense(seed=1, systems=20, d=20, cond=10.0, tol=1e-8, max_cg=20):
    """CG on random SPD systems against a dense solve."""
    rs = RandomStream(seed)
    errs, iters = [], []
    for t in range(systems):
        U, _ = np.linalg.qr(rs.normal_block(t, "cg-basis", d * d).reshape(d, d))
        H = (U * np.geomspace(1.0, cond, d)) @ U.T
        H = 0.5 * (H + H.T)
        g = rs.normal_block(t, "cg-rhs", d)
        res = cg_solve(lambda p: H @ p, g, rho=1e-13, max_cg=max_cg)
        ref = np.linalg.solve(H, -g)
        errs.append(float(np.linalg.norm(res.s - ref) / np.linalg.norm(ref)))
        iters.append(res.iterations)
    return _upper_check("oracles/cg-dense", "CG matches dense solves",
                        dict(d=d, cond=cond, max_cg=max_cg, max_iterations=max(iters)),
                        (seed,), np.arange(systems), np.full(systems, tol), errs, 1.0)


def check_two_loop(seed=1, sets=100, d=20, tol=1e-12):
    """Two-loop recursion against the dense inverse-BFGS recursion."""
    rs = RandomStream(seed)
    errs = []
    for t in range(sets):
        m = 1 + t % 10
        A = rs.normal_block(t, "bfgs-A", d * d).reshape(d, d)
        A = A @ A.T / d + 0.1 * np.eye(d)
        store = CurvaturePairStore(m)
        pairs = []
        for j in range(m):
            s = rs.normal_block(t * 16 + j, "bfgs-s", d)
            v = A @ s
            store.add(s, v)
            pairs.append((s, v))
        g = rs.normal_block(t, "bfgs-g", d)
        gamma = store.scaling()
        ref = dense_bfgs_inverse(pairs, gamma, d) @ g
        got = two_loop_direction(store, g)
        errs.append(float(np.linalg.norm(got - ref) / np.linalg.norm(ref)))
    return _upper_check("oracles/two-loop", "two-loop matches dense BFGS",
                        dict(d=d, sets=sets), (seed,), np.arange(sets), np.full(sets, tol),
                        errs, 1.0)


def check_fisher_gauss_newton(seed=1, trials=10, tol=1e-12):
    """Log-loss Fisher operator equals the generalized Gauss-Newton operator."""
    prob = default_logistic(300, 20)
    st = RandomStream(seed)
    errs = []
    for t in range(trials):
        w = st.normal_block(t, "fisher-w", prob.d)
        v = st.normal_block(t, "fisher-v", prob.d)
        batch = sample_batch(st, t + 1, 64, n=prob.n).indices
        a = prob.gauss_newton_vector_product(w, batch, v, "log-loss-fisher")
        b = prob.gauss_newton_vector_product(w, batch, v, "generalized")
        errs.append(float(np.linalg.norm(a - b) / np.linalg.norm(b)))
    return _upper_check("oracles/fisher-equals-ggn", "Fisher equals generalized Gauss-Newton",
                        dict(trials=trials), (seed,), np.arange(trials), np.full(trials, tol),
                        errs, 1.0)


def gd_iterations_to(problem, tol, alpha=None, max_iter=1_000_000):
    w = np.zeros(problem.d)
    a = 1.0 / problem.L if alpha is None else alpha
    for k in range(max_iter + 1):
        g = problem.gradient(w)
        if np.linalg.norm(g) <= tol:
            return k
        w = w - a * g
    return max_iter


def check_newton_efficiency(problem=None, rho=1e-2, max_cg=50, tol=1e-8, max_outer=30,
                            factor=10, seed=1):
    """Newton-CG reaches ||grad|| <= tol in few iterations; GD needs factor x more."""
    problem = default_logistic() if problem is None else problem
    st = SolverState.start(np.zeros(problem.d), seed)
    curve = [("newton-cg", seed, 0, 0, float(np.linalg.norm(problem.gradient(st.w))))]
    its = 0
    while its < max_outer and curve[-1][-1] > tol:
        newton_cg_step(st, problem, rho=rho, max_cg=max_cg)
        its += 1
        curve.append(("newton-cg", seed, its, st.adp, float(np.linalg.norm(problem.gradient(st.w)))))
    gd = gd_iterations_to(problem, tol)
    consts = dict(rho=rho, max_cg=max_cg, tol=tol, newton_iterations=its, gd_iterations=gd)
    return [_upper_check("newton/gradient-tolerance", "Newton-CG gradient norm",
                         consts, (seed,), [its], [tol], [curve[-1][-1]], 1.0, curves=curve),
            _upper_check("newton/iterations", "Newton-CG outer iterations", consts, (seed,),
                         [its], [max_outer], [its], 1.0),
            _interval_check("newton/gd-ratio", "GD iterations over Newton-CG iterations",
                            consts, (seed,), gd / max(its, 1), factor, math.inf)]


def check_lbfgs_convergence(problem=None, tol=1e-8, max_iter=500, seed=1):
    problem = default_logistic() if problem is None else problem
    st = SQNState.start(np.zeros(problem.d), seed)
    curve = []
    gn = float(np.linalg.norm(problem.gradient(st.w)))
    while gn > tol and st.k <= max_iter:
        lbfgs_batch_step(st, problem)
        gn = float(np.linalg.norm(problem.gradient(st.w)))
        curve.append(("lbfgs", seed, st.k - 1, st.adp, gn))
    return _upper_check("lbfgs/batch-convergence", "batch L-BFGS gradient norm",
                        dict(tol=tol, iterations=st.k - 1), (seed,), [st.k - 1], [tol], [gn],
                        1.0, curves=curve)


# --- proximal methods ---------------------------------------------------------

def default_lasso(n=50, d=20, lam1=0.1, seed=4):
    return CompositeL1Problem(LeastSquaresProblem(make_regression(n, d, seed=seed, sparse_truth=5)),
                              lam1)


def check_ista_contraction(problem=None, iters=2000, floor=1e-11):
    """(phi(w_{k+1}) - phi_*) <= (1 - alpha c)(phi(w_k) - phi_*) at every iteration."""
    problem = default_lasso() if problem is None else problem
    alpha = 1.0 / problem.L
    c = problem.c
    _, f_star = problem.reference()
    w = np.zeros(problem.d)
    gaps = [problem.value(w) - f_star]
    ratios = []
    for _ in range(iters):
        w = ista_step(w, problem, alpha)
        gaps.append(problem.value(w) - f_star)
        if gaps[-2] <= floor:
            break
        ratios.append(gaps[-1] / gaps[-2])
    ks = np.arange(1, len(ratios) + 1)
    return _upper_check("prox/ista-contraction", "ISTA per-iteration contraction",
                        dict(alpha=alpha, c=c, L=problem.L, factor=1 - alpha * c, floor=floor),
                        (), ks, np.full(len(ks), 1 - alpha * c), ratios, 1.0,
                        curves=[("ista", 0, k, k, g) for k, g in enumerate(gaps, 1)])


def solve_ista(problem, tol=1e-13, max_iter=200_000):
    alpha = 1.0 / problem.L
    w = np.zeros(problem.d)
    for _ in range(max_iter):
        w_new = ista_step(w, problem, alpha)
        if np.linalg.norm(w_new - w) <= tol:
            return w_new
        w = w_new
    return w


def solve_prox_newton(problem, tol=1e-12, max_iter=50):
    w = np.zeros(problem.d)
    for _ in range(max_iter):
        model = build_model(problem, w, eta=0.1)
        w, info = prox_newton_step(w, problem, model, superlinear=True, budget=500)
        if info.get("converged") or info["measure0"] <= tol:
            break
    return w


def solve_orthant(problem, tol=1e-12, max_iter=500):
    st = OrthantState(np.zeros(problem.d))
    for _ in range(max_iter):
        try:
            st, ctx = orthant_step(st, problem, curvature="hessian", rho=1e-10, tol=tol)
        except StepFailure:
            break        # no decrease left at working precision
        if st.converged:
            break
    return st.w


def check_prox_agreement(problem=None, tol=1e-6):
    """ISTA, proximal Newton and the orthant method agree on objective and zero pattern."""
    problem = default_lasso() if problem is None else problem
    sols = {"ista": solve_ista(problem), "prox-newton": solve_prox_newton(problem),
            "orthant": solve_orthant(problem)}
    vals = {k: problem.value(w) for k, w in sols.items()}
    supp = {k: tuple(np.flatnonzero(w)) for k, w in sols.items()}
    ref = vals["ista"]
    diffs = [abs(v - ref) for v in vals.values()]
    same = [float(supp[k] != supp["ista"]) for k in sols]
    consts = dict(values=vals, support={k: list(map(int, v)) for k, v in supp.items()},
                  zeros=int(problem.d - len(supp["ista"])))
    return [_upper_check("prox/objective-agreement", "final objectives agree", consts, (),
                         np.arange(3), np.full(3, tol), diffs, 1.0),
            _upper_check("prox/support-agreement", "zero patterns agree", consts, (),
                         np.arange(3), np.zeros(3), same, 1.0)]


def check_split_complementarity(problem=None, iters=500):
    problem = default_lasso() if problem is None else problem
    alpha = 1.0 / problem.L
    u, v = split(np.zeros(problem.d))
    worst = []
    for _ in range(iters):
        u, v = gradient_projection_split_step(u, v, problem, alpha)
        worst.append(float(np.max(u * v)))
    return _upper_check("prox/split-complementarity", "u*v = 0 after every step",
                        dict(alpha=alpha, iters=iters), (), np.arange(1, iters + 1),
                        np.zeros(iters), worst, 1.0)


def ista_split_discrepancy(lam1=0.5, alpha=0.5, w_i=0.3, grad_i=2.0):
    """One-coordinate instance with [w]_i > 0, u = w, v = 0 and
    [w - alpha grad]_i < -alpha lam: ISTA gives w' while the split step gives
    v' > 0 with w' and -v' apart by exactly [w]_i."""
    shift = grad_i       # F(w) = 1/2 (w - (w_i - grad_i))^2 has gradient grad_i at w_i
    target = w_i - shift
    smooth = LeastSquaresProblem(Dataset(np.array([[1.0]]), np.array([target])))
    prob = CompositeL1Problem(smooth, lam1)
    w = np.array([w_i])
    w_ista = ista_step(w, prob, alpha)
    u, v = gradient_projection_split_step(*split(w), prob, alpha, renormalize=False)
    return dict(w=w_i, w_ista=float(w_ista[0]), u=float(u[0]), v=float(v[0]),
                gap=float(w_ista[0] + v[0]))


def check_ista_split_discrepancy(tol=1e-12):
    r = ista_split_discrepancy()
    err = abs(r["gap"] - r["w"])
    ok_signs = r["w_ista"] < 0 and r["u"] == 0 and r["v"] > 0
    return _upper_check("prox/ista-split-discrepancy", "ISTA and split differ by [w]_i",
                        r, (), [0, 1], [tol, 0.0], [err, 0.0 if ok_signs else 1.0], 1.0)


# --- coordinate descent -------------------------------------------------------

def default_cd_quadratic(d=10, seed=7):
    return spread_quadratic_ensemble(1, d, seed=seed, cond=10.0)


def check_cd_rate(problem=None, seeds=tuple(range(1, 51)), checkpoints=None, slack=MEAN_SLACK,
                  cache_tol=1e-10, threads=1):
    """Uniform-random CD with stepsize 1/L_hat against (1 - c/(d L_hat))^k gap_1."""
    problem = default_cd_quadratic() if problem is None else problem
    d = problem.d
    ks = [d, 10 * d, 100 * d] if checkpoints is None else sorted(int(k) for k in checkpoints)
    w1 = np.ones(d)
    gap1 = problem.gap(w1)
    Lhat = float(np.max(problem.coordinate_lipschitz()))
    c = problem.c

    def one(seed):
        st = cd_start(problem, w1, seed, "uniform")
        out, worst = {}, 0.0
        for k in range(1, ks[-1] + 1):
            cd_step(st, problem)
            worst = max(worst, cache_error(st, problem))
            if k in ks:
                out[k] = problem.gap(st.w)
        return out, worst

    seeds_s, res = map_seeds(one, seeds, threads)
    emp = _mean([[r[0][k] for k in ks] for r in res])
    q = cd_rate_bound(c, d, Lhat)
    bound = np.array([q ** k * gap1 for k in ks])
    cache = max(r[1] for r in res)
    curves = [("cd-uniform", s, k, k, r[0][k]) for s, r in zip(seeds_s, res) for k in ks]
    consts = dict(c=c, L_hat=Lhat, d=d, gap1=gap1, factor=q)
    return [_upper_check("cd/rate", "mean gap below the uniform-CD bound", consts, seeds_s, ks,
                         bound, emp, slack, curves=curves),
            _upper_check("cd/cache", "residual cache consistency", consts, seeds_s, [ks[-1]],
                         [cache_tol], [cache], 1.0)]


# --- budget study -------------------------------------------------------------

def budget_logistic(n=10_000, d=100, lam=1e-4, seed=11, decades=3.0):
    """Synthetic logistic problem whose feature scales span ``decades`` orders."""
    data = make_classification(n, d, seed=seed, scale=3.0)
    X = data.X * (np.logspace(0, -decades, d) * math.sqrt(d) / 3)[None, :]
    return LogisticProblem(Dataset(X, data.y), lam, name="budget-logistic")


def sg_stepsize_sweep(problem: LinearModelProblem, alphas, seed, checkpoints, w1=None):
    """Single-sample SG run for all stepsizes in ``alphas`` at once.

    Every stepsize sees the same index sequence sample_batch would draw for
    sg_step with the same seed.  Returns {checkpoint: array of F(w) per alpha}
    with checkpoints counted in steps.
    """
    if problem.sparse:
        X = problem.X.toarray()
    else:
        X = np.ascontiguousarray(problem.X)
    y, lam, n = problem.y, problem.lam, problem.n
    alphas = np.asarray(alphas, float)[:, None]
    W = np.zeros((len(alphas), problem.d)) if w1 is None else np.tile(np.asarray(w1, float),
                                                                      (len(alphas), 1))
    stream = RandomStream(seed)
    cps = sorted(int(c) for c in checkpoints)
    out = {}
    k = 1
    block = 4096
    done = 0
    dphi = problem.dphi
    for cp in cps:
        while done < cp:
            m = min(block, cp - done)
            idx = stream.integers_block(np.arange(k, k + m, dtype=np.uint64), "batch", n, 1)[:, 0]
            for i in idx:
                x = X[i]
                s = dphi(W @ x, y[i])
                W -= alphas * (s[:, None] * x[None, :] + lam * W)
            k += m
            done += m
        with np.errstate(over="ignore", invalid="ignore"):
            out[cp] = np.array([problem.value(w) if np.all(np.isfinite(w)) else np.inf for w in W])
    return out


@dataclass
class BudgetReport:
    budgets: list                      # in epochs
    values: dict                       # solver -> best R_n attained within each budget
    sg_alpha: list                     # tuned stepsize per budget
    f_star: float
    curves: list = field(default_factory=list, repr=False)

    def rows(self):
        for j, b in enumerate(self.budgets):
            for s, vals in self.values.items():
                yield dict(budget_epochs=b, solver=s, value=vals[j], gap=vals[j] - self.f_star,
                           sg_alpha=self.sg_alpha[j] if s == "sg" else None)


def budget_experiment(problem=None, budgets=(0.1, 0.5, 1, 2, 5, 10, 1000), alphas=None,
                      seed=1, solvers=("sg", "gd", "lbfgs"), memory=10):
    """Best R_n attained by each solver within ADP budgets given in epochs."""
    problem = budget_logistic() if problem is None else problem
    budgets = [float(b) for b in budgets]
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise InvalidArgument("budgets must be strictly ascending")
    if not budgets or budgets[0] <= 0:
        raise InvalidArgument("budgets must be positive")
    n = problem.n
    _, f_star = problem.reference()
    values, curves = {}, []
    tuned = [None] * len(budgets)
    adp_b = [int(round(b * n)) for b in budgets]
    if "sg" in solvers:
        alphas = 2.0 ** np.arange(-8, 8) if alphas is None else np.asarray(alphas, float)
        sweep = sg_stepsize_sweep(problem, alphas, seed, adp_b)
        best = []
        for j, a in enumerate(adp_b):
            v = sweep[a]
            i = int(np.argmin(v))
            best.append(float(v[i]))
            tuned[j] = float(alphas[i])
            curves += [(f"sg(alpha={al:g})", seed, a, a, float(vv)) for al, vv in zip(alphas, v)]
        values["sg"] = best
    if "gd" in solvers:
        hist = _batch_history(problem, "gd", adp_b[-1])
        values["gd"] = [min(f for a, f in hist if a <= b) for b in adp_b]
        curves += [("gd", seed, i, a, f) for i, (a, f) in enumerate(hist)]
    if "lbfgs" in solvers:
        hist = _batch_history(problem, "lbfgs", adp_b[-1], memory)
        values["lbfgs"] = [min(f for a, f in hist if a <= b) for b in adp_b]
        curves += [("lbfgs", seed, i, a, f) for i, (a, f) in enumerate(hist)]
    return BudgetReport(budgets, values, tuned, f_star, curves)


def _batch_history(problem, kind, max_adp, memory=10):
    """(ADP, R_n) after every iteration of a batch method, starting at w = 0."""
    n = problem.n
    w = np.zeros(problem.d)
    hist = [(0, problem.value(w))]
    if kind == "gd":
        a = 1.0 / problem.L
        adp = 0
        while adp + n <= max_adp:
            w = w - a * problem.gradient(w)
            adp += n
            hist.append((adp, problem.value(w)))
        return hist
    st = SQNState.start(w, memory=memory)
    while st.adp < max_adp:
        try:
            lbfgs_batch_step(st, problem)
        except StepFailure:
            break         # no decrease left at working precision
        if st.adp > max_adp:
            break
        hist.append((st.adp, st.info["f"]))
        if np.linalg.norm(st.info["g"]) == 0:
            break
    return hist


def _below(x):
    """Largest float strictly below x, so that an upper check becomes strict."""
    return float(np.nextafter(x, -np.inf))


def budget_checks(report: BudgetReport, short=10.0, long=1000.0):
    """Ordering verdicts: SG lowest at every budget up to ``short`` epochs,
    batch L-BFGS lowest at the ``long`` budget."""
    checks = []
    for j, b in enumerate(report.budgets):
        sg = report.values["sg"][j]
        if b <= short:
            for other in ("gd", "lbfgs"):
                o = report.values[other][j]
                checks.append(_upper_check(f"budget/sg-beats-{other}@{b:g}",
                                           "tuned SG below batch method", dict(
                                               budget_epochs=b, sg_alpha=report.sg_alpha[j],
                                               f_star=report.f_star),
                                           (), [b], [_below(o - report.f_star)],
                                           [sg - report.f_star], 1.0))
    if long in report.budgets:
        j = report.budgets.index(long)
        lb = report.values["lbfgs"][j]
        best_other = min(report.values[s][j] for s in report.values if s != "lbfgs")
        checks.append(_upper_check(f"budget/lbfgs-lowest@{long:g}", "batch L-BFGS lowest",
                                   dict(budget_epochs=long, f_star=report.f_star), (), [long],
                                   [_below(best_other - report.f_star)], [lb - report.f_star], 1.0))
    return checks


# --- suites and reports -------------------------------------------------------

SUITES = ("sg-fixed", "sg-diminishing", "nonconvex", "noise-reduction", "svrg-saga", "newton",
          "lbfgs", "cd", "prox", "budget")


def run_suite(name, seeds=None, threads=1, scale=1.0):
    """All checks of one suite.  ``scale`` < 1 shrinks horizons for smoke runs
    (the verdict thresholds are those of the full run)."""
    if name not in SUITES:
        raise InvalidArgument(f"unknown suite {name!r}")
    sd = DEFAULT_SEEDS if seeds is None else tuple(seeds)

    def h(x, lo=1):
        return max(lo, int(round(x * scale)))

    if name == "sg-fixed":
        return check_fixed_stepsize_gap(seeds=sd, horizon=h(4000, 400), tail=h(3000, 300),
                                        threads=threads)
    if name == "sg-diminishing":
        cps = [k for k in (100, 1000, 10_000, 100_000) if k <= max(100, 100_000 * scale)]
        return check_diminishing_rate(seeds=sd, checkpoints=cps, threads=threads)
    if name == "nonconvex":
        return check_nonconvex_average_gradients(seeds=sd, K=h(100_000, 2000), threads=threads)
    if name == "noise-reduction":
        return check_noise_reduction(seeds=sd, threads=threads)
    if name == "svrg-saga":
        return check_variance_reduced(epochs=h(100, 5), tol=1e-10 if scale >= 1 else 1e-2)
    if name == "newton":
        return (check_newton_efficiency() + [check_hessian_products(), check_cg_dense(),
                                             check_fisher_gauss_newton()])
    if name == "lbfgs":
        return [check_two_loop(), check_lbfgs_convergence()]
    if name == "cd":
        return check_cd_rate(seeds=tuple(range(1, 51)) if seeds is None else sd, threads=threads)
    if name == "prox":
        return ([check_ista_contraction()] + check_prox_agreement()
                + [check_split_complementarity(), check_ista_split_discrepancy()])
    long = 1000.0 if scale >= 1 else 20.0
    rep = budget_experiment(budgets=(0.1, 0.5, 1, 2, 5, 10, long))
    return budget_checks(rep, long=long)


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def verdict_csv(checks, header=None):
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["check", "passed", "checkpoint", "lower", "bound", "slack", "empirical",
                 "margin", "seeds"])
    for ch in checks:
        for at, b, e, m in zip(ch.checkpoints, ch.bound, ch.empirical, ch.margins):
            wr.writerow([ch.name, int(ch.passed), _cell(float(at)), _cell(ch.lower),
                         _cell(float(b)), _cell(float(ch.slack)), _cell(float(e)),
                         _cell(float(m)), len(ch.seeds)])
    return buf.getvalue()


def curves_csv(checks, header=None):
    """Long format, one row per (solver, seed, k)."""
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["check", "solver", "seed", "k", "adp", "value"])
    for ch in checks:
        for solver, seed, k, adp, val in ch.curves:
            wr.writerow([ch.name, solver, seed, int(k), int(adp), _cell(float(val))])
    return buf.getvalue()


def summary_text(checks, header=None):
    lines = [f"# {header}"] if header else []
    for ch in checks:
        lines.append(ch.verdict_line())
        if ch.constants:
            lines.append("    constants: " + ", ".join(f"{k}={_fmt_const(v)}"
                                                       for k, v in ch.constants.items()))
        if ch.seeds:
            lines.append(f"    seeds: {len(ch.seeds)} ({ch.seeds[0]}..{ch.seeds[-1]}), "
                         f"slack {ch.slack:g}")
    n_pass = sum(ch.passed for ch in checks)
    lines.append(f"{n_pass}/{len(checks)} checks passed")
    return "\n".join(lines) + "\n"


def _fmt_const(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}: {_fmt_const(x)}" for k, x in v.items()) + "}"
    return str(v)


def budget_csv(report: BudgetReport, header=None):
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["budget_epochs", "solver", "value", "gap", "sg_alpha"])
    for r in report.rows():
        wr.writerow([_cell(r["budget_epochs"]), r["solver"], _cell(r["value"]), _cell(r["gap"]),
                     _cell(r["sg_alpha"])])
    return buf.getvalue()
