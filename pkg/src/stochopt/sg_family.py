"""Stochastic gradient iterations: plain/mini-batch SG, momentum, Nesterov,
AdaGrad, RMSprop and Polyak-Ruppert iterate averaging.

All steps share one convention: ``state.w`` is w_k on entry, the step
computes w_{k+1}, and nothing in the state is modified unless the new
iterate is finite (so a Diverged error carries the last finite state).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (WITH, Diverged, InvalidArgument, RandomStream, as_schedule,
                   sample_batch)


@dataclass
class SGState:
    w: np.ndarray
    stream: RandomStream
    k: int = 1
    adp: int = 0
    velocity: np.ndarray = None       # w_k - w_{k-1}; zero since w_0 := w_1
    accum: np.ndarray = None          # AdaGrad / RMSprop second moments
    avg: np.ndarray = None            # running mean of w_1..w_k
    avg_count: int = 1
    last_alpha: float = None
    last_batch: int = None
    last_eval_point: np.ndarray = None
    projections: int = 0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w = np.array(self.w, dtype=np.float64)
        if self.velocity is None:
            self.velocity = np.zeros_like(self.w)
        if self.accum is None:
            self.accum = np.zeros_like(self.w)
        if self.avg is None:
            self.avg = self.w.copy()

    @classmethod
    def start(cls, w1, seed=0):
        return cls(np.array(w1, dtype=np.float64), RandomStream(seed))

    def copy(self):
        return SGState(self.w.copy(), self.stream, self.k, self.adp, self.velocity.copy(),
                       self.accum.copy(), self.avg.copy(), self.avg_count, self.last_alpha,
                       self.last_batch, None, self.projections, dict(self.info))


def stochastic_direction(state, problem, batch_size, at=None, mode=WITH):
    """g(w, xi_k): batch-average gradient (plus oracle noise) for iteration k."""
    if batch_size < 1:
        raise InvalidArgument("batch size must be at least 1")
    problem.require_nonempty()
    batch = sample_batch(state.stream, state.k, batch_size, mode, problem.n)
    w = state.w if at is None else at
    g = problem.sample_gradient(w, batch, state.stream)
    if not np.all(np.isfinite(g)):
        raise Diverged(f"non-finite gradient at iteration {state.k}", state)
    return g


def _commit(state, w_new, alpha, batch_size, project=None):
    if project is not None:
        wp = project(w_new)
        if not np.array_equal(wp, w_new):
            state.projections += 1
        w_new = wp
    if not np.all(np.isfinite(w_new)):
        raise Diverged(f"non-finite iterate at iteration {state.k}", state)
    state.velocity = w_new - state.w
    state.w = w_new
    state.k += 1
    state.adp += batch_size
    state.last_alpha = alpha
    state.last_batch = batch_size
    return state


def sg_step(state: SGState, problem, schedule, batch_size=1, mode=WITH, project=None):
    """w_{k+1} = w_k - alpha_k g(w_k, xi_k)."""
    alpha = as_schedule(schedule).at(state.k)
    g = stochastic_direction(state, problem, batch_size, mode=mode)
    return _commit(state, state.w - alpha * g, alpha, batch_size, project)


def momentum_step(state: SGState, problem, alpha, beta, batch_size=1, mode=WITH, project=None):
    """Heavy ball: w_{k+1} = w_k - alpha g + beta (w_k - w_{k-1})."""
    if not 0 <= beta < 1:
        raise InvalidArgument("beta must lie in [0, 1)")
    a = as_schedule(alpha).at(state.k)
    g = stochastic_direction(state, problem, batch_size, mode=mode)
    w_new = state.w - a * g
    if beta != 0:
        w_new = w_new + beta * state.velocity
    return _commit(state, w_new, a, batch_size, project)


def nesterov_beta(k):
    return (k - 1) / (k + 2)


def nesterov_step(state: SGState, problem, alpha, beta=None, batch_size=1, mode=WITH,
                  project=None):
    """w~ = w_k + beta (w_k - w_{k-1});  w_{k+1} = w~ - alpha g(w~)."""
    b = nesterov_beta(state.k) if beta is None else beta
    if not 0 <= b < 1:
        raise InvalidArgument("beta must lie in [0, 1)")
    a = as_schedule(alpha).at(state.k)
    w_tilde = state.w + b * state.velocity if b != 0 else state.w
    state.last_eval_point = w_tilde
    g = stochastic_direction(state, problem, batch_size, at=w_tilde, mode=mode)
    return _commit(state, w_tilde - a * g, a, batch_size, project)


def adagrad_step(state: SGState, problem, alpha, mu_reg=1e-8, batch_size=1, mode=WITH):
    """R_i += g_i^2;  w_i -= alpha g_i / sqrt(R_i + mu)."""
    a = as_schedule(alpha).at(state.k)
    g = stochastic_direction(state, problem, batch_size, mode=mode)
    R = state.accum + g * g
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(g != 0, a * g / np.sqrt(R + mu_reg), 0.0)
    w_new = state.w - step
    _commit(state, w_new, a, batch_size)
    state.accum = R
    return state


def rmsprop_step(state: SGState, problem, alpha, decay=0.1, mu_reg=1e-8, batch_size=1,
                 mode=WITH):
    """R_i <- (1 - decay) R_i + decay g_i^2;  w_i -= alpha g_i / sqrt(R_i + mu)."""
    if not 0 < decay <= 1:
        raise InvalidArgument("decay must lie in (0, 1]")
    a = as_schedule(alpha).at(state.k)
    g = stochastic_direction(state, problem, batch_size, mode=mode)
    R = (1.0 - decay) * state.accum + decay * g * g if decay != 1 else g * g
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(g != 0, a * g / np.sqrt(R + mu_reg), 0.0)
    _commit(state, state.w - step, a, batch_size)
    state.accum = R
    return state


def effective_stepsizes(state, alpha, mu_reg=1e-8):
    return alpha / np.sqrt(state.accum + mu_reg)


def update_average(state: SGState):
    """Fold the current iterate into the running mean of w_1..w_k."""
    if state.k < 1:
        raise InvalidArgument("no iterates yet")
    if state.avg_count < state.k:
        state.avg_count += 1
        state.avg = state.avg + (state.w - state.avg) / state.avg_count
    return state


def gradient_descent_step(state: SGState, problem, alpha):
    """Deterministic full-gradient step (charged n accessed data points)."""
    a = as_schedule(alpha).at(state.k)
    g = problem.gradient(state.w)
    if not np.all(np.isfinite(g)):
        raise Diverged(f"non-finite gradient at iteration {state.k}", state)
    return _commit(state, state.w - a * g, a, problem.n)


def heavy_ball_parameters(c, L):
    """Optimal heavy-ball pair on quadratics and its contraction constant."""
    sc, sL = np.sqrt(c), np.sqrt(L)
    alpha = 4.0 / (sL + sc) ** 2
    beta = ((sL - sc) / (sL + sc)) ** 2
    kappa = L / c
    rate = (np.sqrt(kappa) - 1) / (np.sqrt(kappa) + 1)
    return alpha, beta, rate
