"""Shared numeric substrate: seeded streams, batches, stepsize schedules, traces.

Randomness
----------
Every random quantity used by a solver is a pure function of
``(run_seed, k, tag)`` where ``k`` is the iteration counter and ``tag`` names
the purpose ("batch", "noise", ...).  The mapping is:

    key_tag  = SeedSequence([run_seed, crc32(tag)]).generate_state(1, uint64)
    sub_k    = mix64(key_tag + k * G)
    word_j   = mix64(sub_k + (j + 1) * G)        j = 0, 1, 2, ...

with ``G = 0x9E3779B97F4A7C15`` and ``mix64`` the SplitMix64 output
finalizer, i.e. ``word_0, word_1, ...`` is the SplitMix64 sequence started
from ``sub_k``.  Because nothing depends on call order, draws for many
iterations can be produced in one vectorized call and agree bit for bit with
per-iteration calls.  Uniforms use the top 53 bits of a word, normals use
Box-Muller on words ``[0, m)`` and ``[m, 2m)``.
"""

from __future__ import annotations

import csv
import io
import math
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

__version__ = "0.1.0"

_G = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 2.0 ** -53

# iterations per cached block for the per-iteration draw helpers
_BLOCK = 512


class InvalidArgument(ValueError):
    pass


class CapabilityError(Exception):
    """Operation not supported by the given problem."""


class Diverged(RuntimeError):
    """Run left the finite region; ``state`` is the last finite state."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


class StepFailure(RuntimeError):
    pass


class NumericalError(ArithmeticError):
    pass


def mix64(z):
    z = np.asarray(z, dtype=np.uint64)
    z = z ^ (z >> np.uint64(30))
    z = z * _C1
    z = z ^ (z >> np.uint64(27))
    z = z * _C2
    return z ^ (z >> np.uint64(31))


class RandomStream:
    """Counter-based random draws keyed by (run_seed, k, tag).

    The draw helpers cache whole blocks of iterations, which makes
    per-iteration calls cheap without changing any value.
    """

    def __init__(self, run_seed: int):
        run_seed = int(run_seed)
        if not 0 <= run_seed < 2**64:
            raise InvalidArgument("run_seed must be a 64-bit unsigned integer")
        self.run_seed = run_seed
        self._keys = {}
        self._cache = {}

    def key(self, tag: str):
        kt = self._keys.get(tag)
        if kt is None:
            ss = np.random.SeedSequence([self.run_seed, zlib.crc32(tag.encode())])
            kt = ss.generate_state(1, np.uint64)[0]
            self._keys[tag] = kt
        return kt

    def words(self, k, tag, count):
        """Raw 64-bit words; ``k`` may be a scalar or an integer array."""
        ks = np.atleast_1d(np.asarray(k, dtype=np.uint64))
        with np.errstate(over="ignore"):
            sub = mix64(self.key(tag) + ks * _G)
            j = np.arange(1, count + 1, dtype=np.uint64) * _G
            out = mix64(sub[:, None] + j[None, :])
        return out[0] if np.ndim(k) == 0 else out

    # vectorized generators (k scalar or array) ---------------------------

    def uniform_block(self, k, tag, count):
        return (self.words(k, tag, count) >> np.uint64(11)).astype(np.float64) * _TWO53

    def normal_block(self, k, tag, count):
        w = self.words(k, tag, 2 * count)
        u1 = ((w[..., :count] >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO53
        u2 = (w[..., count:] >> np.uint64(11)).astype(np.float64) * _TWO53
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def integers_block(self, k, tag, n, count):
        u = self.uniform_block(k, tag, count)
        return np.minimum((u * n).astype(np.int64), n - 1)

    # per-iteration helpers with block caching ----------------------------

    def _cached(self, kind, k, tag, count, n=0):
        k = int(k)
        b0 = (k // _BLOCK) * _BLOCK
        ck = (kind, tag, count, n)
        ent = self._cache.get(ck)
        if ent is None or ent[0] != b0:
            ks = np.arange(b0, b0 + _BLOCK, dtype=np.uint64)
            if kind == "n":
                arr = self.normal_block(ks, tag, count)
            elif kind == "u":
                arr = self.uniform_block(ks, tag, count)
            else:
                arr = self.integers_block(ks, tag, n, count)
            arr.flags.writeable = False
            ent = (b0, arr)
            self._cache[ck] = ent
        return ent[1][k - b0]

    def normal(self, k, tag, count):
        if count > 4096:
            return self.normal_block(k, tag, count)
        return self._cached("n", k, tag, count)

    def uniform(self, k, tag, count):
        if count > 4096:
            return self.uniform_block(k, tag, count)
        return self._cached("u", k, tag, count)

    def integers(self, k, tag, n, count):
        if count > 4096:
            return self.integers_block(k, tag, n, count)
        return self._cached("i", k, tag, count, n)

    def permutation(self, k, tag, n):
        return np.argsort(self.words(k, tag, n), kind="stable")


def derive_seed(run_seed, tag):
    """Independent 64-bit seed for a sub-experiment."""
    return int(RandomStream(run_seed).key(tag))


@dataclass(frozen=True)
class Batch:
    k: int
    indices: np.ndarray  # 0-based component indices
    mode: str
    seed: int

    @property
    def size(self):
        return len(self.indices)


WITH = "with-replacement"
WITHOUT = "without-replacement"


def sample_batch(stream: RandomStream, k: int, size: int, mode: str = WITH, n: int = 1,
                 tag: str = "batch") -> Batch:
    """Uniform batch of component indices for iteration k (0-based indices)."""
    size = int(size)
    if n < 1:
        raise InvalidArgument("population is empty")
    if size < 1:
        raise InvalidArgument("batch size must be at least 1")
    if mode == WITH:
        if n == 1:
            idx = np.zeros(size, dtype=np.int64)
        else:
            idx = stream.integers(k, tag, n, size)
    elif mode == WITHOUT:
        if size > n:
            raise InvalidArgument(f"batch size {size} exceeds population {n}")
        if size == n == 1:
            idx = np.zeros(1, dtype=np.int64)
        else:
            idx = stream.permutation(k, tag, n)[:size]
    else:
        raise InvalidArgument(f"unknown sampling mode {mode!r}")
    return Batch(int(k), idx, mode, stream.run_seed)


# --- stepsize schedules -------------------------------------------------------

@dataclass(frozen=True)
class Fixed:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidArgument("stepsize must be positive")

    def at(self, k):
        return self.alpha


@dataclass(frozen=True)
class Diminishing:
    """alpha_k = beta / (gamma + k)."""
    beta: float
    gamma: float = 0.0

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidArgument("beta must be positive")
        if not self.gamma + 1 > 0:
            raise InvalidArgument("gamma + 1 must be positive")

    def at(self, k):
        return self.beta / (self.gamma + k)


@dataclass(frozen=True)
class PerCoordinate:
    """Base stepsize for accumulator-driven methods; the scaling lives in the solver state."""
    alpha: float
    mu_reg: float = 1e-8

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidArgument("stepsize must be positive")

    def at(self, k):
        return self.alpha


@dataclass(frozen=True)
class InvSqrt:
    """alpha_k = a / sqrt(k); long steps used together with iterate averaging."""
    a: float

    def at(self, k):
        return self.a / math.sqrt(k)


def stepsize_at(schedule, k):
    if k < 1:
        raise InvalidArgument("iterations are counted from 1")
    return schedule.at(k)


def as_schedule(alpha):
    if hasattr(alpha, "at"):
        return alpha
    return Fixed(float(alpha))


def recommended_beta(c, mu=1.0):
    """beta = 2/(c mu), the choice minimizing the leading constant of nu."""
    return 2.0 / (c * mu)


def min_gamma(beta, alpha_max):
    """Smallest gamma with beta/(gamma+1) <= alpha_max."""
    return max(0.0, beta / alpha_max - 1.0)


# --- traces -------------------------------------------------------------------

TRACE_FIELDS = ("k", "adp", "alpha", "batch_size", "fval", "gnorm", "wall_ns")


@dataclass
class TraceRecord:
    k: int
    adp: int
    alpha: float | None = None
    batch_size: int | None = None
    fval: float | None = None
    gnorm: float | None = None
    wall_ns: int | None = None


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(int(x))


@dataclass
class Trace:
    run_seed: int
    solver: str
    problem: str
    records: list = field(default_factory=list)
    f0: float | None = None
    status: str = "ok"

    def append(self, rec: TraceRecord):
        if self.records and rec.adp < self.records[-1].adp:
            raise InvalidArgument("adp must be nondecreasing")
        self.records.append(rec)

    def column(self, name):
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for r in self.records], dtype=float)

    def last_fval(self):
        for r in reversed(self.records):
            if r.fval is not None:
                return r.fval
        return self.f0

    def to_csv(self, header=None):
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(TRACE_FIELDS)
        for r in self.records:
            wr.writerow([_fmt(getattr(r, f)) for f in TRACE_FIELDS])
        return buf.getvalue()


def run_loop(state, step, problem, *, max_iter=None, max_adp=None, trace_every=None,
             solver="solver", problem_id="problem", wall_time=False, callback=None):
    """Drive ``step(state)`` and record one TraceRecord per iteration.

    ``trace_every`` is measured in accessed data points (default: one epoch,
    i.e. n).  Objective and gradient evaluations made here are not charged
    to ``state.adp``.  The step is expected to set ``state.last_alpha`` and
    ``state.last_batch``.
    """
    if max_iter is None and max_adp is None:
        raise InvalidArgument("need an iteration or ADP budget")
    every = trace_every if trace_every is not None else problem.n
    tr = Trace(getattr(state, "stream").run_seed if hasattr(state, "stream") else 0,
               solver, problem_id)
    tr.f0 = float(problem.value(state.w))
    mark = state.adp + every
    t0 = time.perf_counter_ns()
    it = 0
    while True:
        if max_iter is not None and it >= max_iter:
            break
        if max_adp is not None and state.adp >= max_adp:
            break
        k = state.k
        try:
            state = step(state)
        except Diverged as e:
            tr.status = "diverged"
            e.trace = tr
            raise
        it += 1
        done = (max_iter is not None and it >= max_iter) or \
               (max_adp is not None and state.adp >= max_adp)
        rec = TraceRecord(k, int(state.adp), getattr(state, "last_alpha", None),
                          getattr(state, "last_batch", None))
        if state.adp >= mark or done:
            f = float(problem.value(state.w))
            if not np.isfinite(f) or f > 1e12:
                tr.status = "diverged"
                err = Diverged(f"objective {f!r} at iteration {k}", state)
                err.trace = tr
                raise err
            rec.fval = f
            rec.gnorm = float(np.linalg.norm(problem.gradient(state.w)))
            while mark <= state.adp:
                mark += every
        if wall_time:
            rec.wall_ns = time.perf_counter_ns() - t0
        tr.append(rec)
        if callback is not None:
            callback(state, rec)
    return state, tr


def check_finite(w, state, what="iterate"):
    if not np.all(np.isfinite(w)):
        raise Diverged(f"non-finite {what} at iteration {state.k}", state)
