"""Solvers for phi(w) = F(w) + lam ||w||_1: ISTA, FISTA, gradient projection on
the (u, v) split, proximal Newton with a coordinate-descent subsolver, and the
orthant-based method."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Diverged, InvalidArgument, StepFailure
from .second_order import CurvaturePairStore, cg_solve, two_loop_direction


def soft_threshold(x, tau):
    if tau < 0:
        raise InvalidArgument("threshold must be nonnegative")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def min_norm_subgradient(w, grad, lam):
    """Smallest element of grad + lam * d||w||_1 (zero exactly at optimality)."""
    w = np.asarray(w, float)
    grad = np.asarray(grad, float)
    out = np.zeros_like(grad)
    pos = (w > 0) | ((w == 0) & (grad + lam < 0))
    neg = (w < 0) | ((w == 0) & (grad - lam > 0))
    out[pos] = grad[pos] + lam
    out[neg] = grad[neg] - lam
    return out


def _finite(w, what="iterate"):
    if not np.all(np.isfinite(w)):
        raise Diverged(f"non-finite {what}")
    return w


def ista_step(w, problem, alpha, grad=None, lam1=None):
    """soft_threshold(w - alpha grad F(w), alpha lam); ``grad`` may be a batch gradient."""
    if not alpha > 0:
        raise InvalidArgument("stepsize must be positive")
    lam = problem.lam1 if lam1 is None else lam1
    g = problem.smooth_gradient(w) if grad is None else grad
    return _finite(soft_threshold(w - alpha * g, alpha * lam))


def ista_backtracking_step(w, problem, alpha, shrink=0.5, max_backtracks=60):
    """ISTA step with alpha halved until the composite sufficient decrease holds."""
    f0 = problem.smooth_value(w)
    g = problem.smooth_gradient(w)
    for _ in range(max_backtracks + 1):
        w_new = ista_step(w, problem, alpha, grad=g)
        dw = w_new - w
        if problem.smooth_value(w_new) <= f0 + g @ dw + (0.5 / alpha) * (dw @ dw):
            return w_new, alpha
        alpha *= shrink
    raise StepFailure("ISTA backtracking exhausted")


def ista(problem, w0, alpha=None, max_iter=10000, tol=0.0, callback=None):
    alpha = 1.0 / problem.L if alpha is None else alpha
    w = np.array(w0, dtype=float)
    for k in range(max_iter):
        w_new = ista_step(w, problem, alpha)
        if callback is not None:
            callback(k, w, w_new)
        done = np.linalg.norm(w_new - w) <= tol
        w = w_new
        if done:
            break
    return w


def reference_solution(problem, tol=1e-13, max_iter=1_000_000):
    """High-accuracy composite optimum by ISTA with alpha = 1/L."""
    alpha = 1.0 / problem.L
    w = np.zeros(problem.d)
    for _ in range(max_iter):
        w_new = ista_step(w, problem, alpha)
        step = np.linalg.norm(w_new - w)
        w = w_new
        if step <= tol * max(1.0, np.linalg.norm(w)):
            break
    return w


@dataclass
class FistaState:
    w: np.ndarray
    y: np.ndarray = None
    t: float = 1.0
    k: int = 1

    def __post_init__(self):
        self.w = np.array(self.w, dtype=float)
        if self.y is None:
            self.y = self.w.copy()


def fista_step(state: FistaState, problem, alpha, momentum=True):
    """ISTA at the extrapolated point, then the standard t_k momentum update."""
    w_new = ista_step(state.y, problem, alpha)
    t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * state.t * state.t))
    coef = (state.t - 1.0) / t_new if momentum else 0.0
    state.y = w_new + coef * (w_new - state.w) if coef != 0 else w_new
    state.w, state.t = w_new, t_new
    state.k += 1
    return state


# --- gradient projection on the split w = u - v -------------------------------

def gradient_projection_split_step(u, v, problem, alpha, renormalize=True):
    """Projected gradient step for min F(u - v) + lam 1^T(u + v), u, v >= 0.

    With ``renormalize`` the common part min(u', v') is removed from both so
    that u' * v' = 0 again.
    """
    lam = problem.lam1
    g = problem.smooth_gradient(u - v)
    u_new = np.maximum(u - alpha * (g + lam), 0.0)
    v_new = np.maximum(v - alpha * (lam - g), 0.0)
    if renormalize:
        m = np.minimum(u_new, v_new)
        u_new, v_new = u_new - m, v_new - m
    return _finite(u_new), _finite(v_new)


def split(w):
    w = np.asarray(w, float)
    return np.maximum(w, 0.0), np.maximum(-w, 0.0)


# --- proximal Newton ----------------------------------------------------------

@dataclass
class ProxNewtonModel:
    """q(w) = F_k + g^T (w - w_k) + 1/2 (w - w_k)^T H (w - w_k) + lam ||w||_1."""
    w_k: np.ndarray
    grad: np.ndarray
    H: np.ndarray
    F_k: float
    lam: float
    eta: float = 0.1
    _t: float = None

    def value(self, w):
        dw = w - self.w_k
        return self.F_k + self.grad @ dw + 0.5 * dw @ (self.H @ dw) + self.lam * np.sum(np.abs(w))

    def smooth_grad(self, w):
        return self.grad + self.H @ (w - self.w_k)

    def ista_map(self, w):
        if self._t is None:
            self._t = 1.0 / float(np.linalg.eigvalsh(self.H)[-1])
        t = self._t
        return soft_threshold(w - t * self.smooth_grad(w), t * self.lam)

    def ista_measure(self, w):
        return float(np.linalg.norm(self.ista_map(w) - w))


def dense_hessian(problem, w, batch=None, mu_reg=0.0):
    smooth = getattr(problem, "smooth", problem)
    if hasattr(smooth, "hessian_dense"):
        H = smooth.hessian_dense(w, batch)
    else:
        E = np.eye(problem.d)
        H = np.column_stack([smooth.hessian_vector_product(w, batch, E[:, i])
                             for i in range(problem.d)])
        H = 0.5 * (H + H.T)
    return H + mu_reg * np.eye(problem.d)


def lbfgs_dense_hessian(store: CurvaturePairStore, d):
    """Dense B_k whose inverse is the L-BFGS operator of ``store`` (direct BFGS updates)."""
    B = np.eye(d) / store.scaling()
    for s, v, _ in store.pairs:
        Bs = B @ s
        B = B - np.outer(Bs, Bs) / (s @ Bs) + np.outer(v, v) / (s @ v)
    return B


def build_model(problem, w, H=None, eta=0.1):
    if H is None:
        H = dense_hessian(problem, w)
    return ProxNewtonModel(np.array(w, float), problem.smooth_gradient(w), H,
                           problem.smooth_value(w), problem.lam1, eta)


def prox_newton_step(w, problem, model: ProxNewtonModel = None, eta=None, budget=100,
                     gamma=0.5, sigma=1e-4, superlinear=False, reduced=False):
    """Coordinate descent on q_k until the ISTA-norm test holds, then backtrack on phi.

    Returns (w_next, info).  ``reduced`` restricts the subsolver to the free
    coordinates (w_i != 0 or |grad_i| > lam).
    """
    w = np.array(w, float)
    if model is None:
        model = build_model(problem, w)
    eta = model.eta if eta is None else eta
    m0 = model.ista_measure(w)
    info = {"measure0": m0, "passes": 0, "inexact": False, "alpha": 1.0}
    if m0 == 0.0:
        info["converged"] = True
        info["measure"] = 0.0
        return w, info
    if superlinear:
        eta = min(0.1, math.sqrt(m0))
    target = eta * m0
    q0 = model.value(w)
    slack = 1e-16 * (1.0 + abs(q0))
    H, lam = model.H, model.lam
    diag = np.diag(H)
    coords = np.arange(problem.d)
    if reduced:
        coords = coords[(w != 0) | (np.abs(model.grad) > lam)]
    wt = w.copy()
    gq = model.grad.copy()
    best, best_q = wt.copy(), q0
    ok = False
    for p in range(budget):
        for i in coords:
            hii = diag[i]
            new = soft_threshold(wt[i] - gq[i] / hii, lam / hii)
            delta = new - wt[i]
            if delta != 0.0:
                wt[i] = new
                gq += delta * H[:, i]
        info["passes"] = p + 1
        q = model.value(wt)
        if q < best_q:
            best, best_q = wt.copy(), q
        meas = model.ista_measure(wt)
        if meas <= target and q < q0 - slack:
            ok = True
            break
    if not ok:
        info["inexact"] = True
        wt = best
    info["measure"] = model.ista_measure(wt)
    dvec = wt - w
    if not np.any(dvec):
        info["converged"] = True
        return w, info
    phi0 = problem.value(w)
    l1 = lam * np.sum(np.abs(w))
    dec = float(model.grad @ dvec) + lam * np.sum(np.abs(wt)) - l1
    a = 1.0
    for _ in range(61):
        w_try = w + a * dvec
        if problem.value(w_try) <= phi0 + sigma * a * dec:
            info["alpha"] = a
            return _finite(w_try), info
        a *= gamma
    raise StepFailure("proximal Newton line search exhausted")


# --- orthant-based method -----------------------------------------------------

@dataclass
class OrthantContext:
    zeta: np.ndarray
    active: np.ndarray       # boolean mask A_k
    free: np.ndarray         # boolean mask F_k
    ghat: np.ndarray


def orthant_context(w, grad, lam):
    ghat = min_norm_subgradient(w, grad, lam)
    zeta = np.where(w != 0, np.sign(w), np.sign(-ghat))
    zeta[zeta == 0] = 1.0
    active = (w == 0) & (np.abs(grad) <= lam)
    return OrthantContext(zeta, active, ~active, ghat)


def orthant_project(x, zeta):
    """Zero every coordinate whose sign disagrees with zeta."""
    return np.where(np.sign(x) == zeta, x, 0.0)


@dataclass
class OrthantState:
    w: np.ndarray
    store: CurvaturePairStore = field(default_factory=lambda: CurvaturePairStore(10))
    k: int = 1
    converged: bool = False
    grad: np.ndarray = None


def _masked_two_loop(store, g, mask):
    tmp = CurvaturePairStore(store.m)
    for s, v, _ in store.pairs:
        tmp.add(np.where(mask, s, 0.0), np.where(mask, v, 0.0))
    return two_loop_direction(tmp, g)


def orthant_step(state: OrthantState, problem, lam=None, curvature="lbfgs", rho=1e-6,
                 max_cg=None, gamma=0.5, tol=1e-12):
    """One orthant-based step; sets ``state.converged`` when min-norm subgradient vanishes."""
    lam = problem.lam1 if lam is None else lam
    w = state.w
    g = problem.smooth_gradient(w) if state.grad is None else state.grad
    ctx = orthant_context(w, g, lam)
    F = ctx.free
    if np.linalg.norm(ctx.ghat) <= tol or not np.any(ctx.ghat[F]):
        state.converged = True
        return state, ctx
    gh = np.where(F, ctx.ghat, 0.0)
    if curvature == "hessian":
        def op(p):
            full = np.where(F, p, 0.0)
            return np.where(F, problem.hessian_vector_product(w, None, full), 0.0)
        res = cg_solve(op, gh, rho, max_cg or 2 * problem.d)
        d = np.where(F, res.s, 0.0)
    elif curvature == "lbfgs":
        d = -np.where(F, _masked_two_loop(state.store, gh, F), 0.0)
    else:
        raise InvalidArgument(f"unknown curvature {curvature!r}")
    if gh @ d >= 0:
        d = -gh
    phi0 = problem.value(w)
    a = 1.0
    for _ in range(61):
        w_try = orthant_project(w + a * d, ctx.zeta)
        if problem.value(w_try) < phi0:
            break
        a *= gamma
    else:
        raise StepFailure("orthant line search exhausted")
    w_try = _finite(w_try)
    g_new = problem.smooth_gradient(w_try)
    if curvature == "lbfgs":
        state.store.add(w_try - w, g_new - g)
    state.w, state.grad = w_try, g_new
    state.k += 1
    return state, ctx


def format_sparse(w, precision=17):
    """Nonzero coordinates as ``index:value`` with 1-based indices."""
    nz = np.flatnonzero(w)
    return " ".join(f"{i + 1}:{w[i]:.{precision}g}" for i in nz)
