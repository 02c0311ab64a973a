"""Finite-sum objectives with gradient and curvature oracles.

Component indices are 0-based throughout the Python API; the LIBSVM reader
converts the 1-based feature indices of the file format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .core import Batch, CapabilityError, InvalidArgument, RandomStream


# --- datasets -----------------------------------------------------------------

class ParseError(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass
class Dataset:
    X: object          # scipy CSR matrix or dense ndarray, shape (n, d)
    y: np.ndarray

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def row(self, i):
        """(indices, values) of row i, indices 0-based."""
        if sp.issparse(self.X):
            a, b = self.X.indptr[i], self.X.indptr[i + 1]
            return self.X.indices[a:b], self.X.data[a:b]
        r = self.X[i]
        nz = np.flatnonzero(r)
        return nz, r[nz]


def load_libsvm(path, d=None, classification=True) -> Dataset:
    """Read ``<label> <index>:<value> ...`` lines with 1-based ascending indices."""
    labels, data, cols, indptr = [], [], [], [0]
    dmax = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            tok = line.split()
            try:
                lab = float(tok[0])
            except ValueError:
                raise ParseError(f"line {lineno}: bad label {tok[0]!r}") from None
            if classification and lab not in (-1.0, 1.0):
                raise FormatError(f"line {lineno}: label {tok[0]!r} not in {{-1, +1}}")
            prev = 0
            for t in tok[1:]:
                idx, sep, val = t.partition(":")
                try:
                    j = int(idx)
                    v = float(val)
                except ValueError:
                    raise ParseError(f"line {lineno}: malformed feature {t!r}") from None
                if not sep:
                    raise ParseError(f"line {lineno}: malformed feature {t!r}")
                if j < 1:
                    raise FormatError(f"line {lineno}: feature index {j} < 1")
                if j <= prev:
                    kind = "duplicate" if j == prev else "nonascending"
                    raise FormatError(f"line {lineno}: {kind} feature index {j}")
                prev = j
                cols.append(j - 1)
                data.append(v)
            dmax = max(dmax, prev)
            labels.append(lab)
            indptr.append(len(cols))
    if d is None:
        d = dmax
    elif dmax > d:
        raise FormatError(f"feature index {dmax} exceeds declared dimension {d}")
    X = sp.csr_matrix((np.asarray(data, float), np.asarray(cols, np.int64),
                       np.asarray(indptr, np.int64)), shape=(len(labels), d))
    return Dataset(X, np.asarray(labels, float))


def _idx(batch):
    if isinstance(batch, Batch):
        return batch.indices
    if batch is None:
        return None
    return np.asarray(batch, dtype=np.int64)


# --- problem base -------------------------------------------------------------

class Problem:
    """Finite sum F(w) = (1/n) sum_i f_i(w) with oracles.

    ``noise`` (M) switches on an additive Gaussian gradient oracle with
    covariance (M/d) I per sample, so that the second-moment assumption holds
    with mu = mu_G = 1 and M_V = 0.
    """
    name = "problem"
    n = 1
    d = 1
    noise = 0.0
    c = None          # strong convexity constant
    L = None          # Lipschitz constant of grad F
    L_component = None
    f_inf = None

    def batch_value(self, w, batch):
        idx = _idx(batch)
        return float(np.mean([self.component_value(w, i) for i in idx]))

    def value(self, w):
        return self.batch_value(w, np.arange(self.n))

    def gradient(self, w):
        return self.batch_gradient(w, None)

    def batch_gradient(self, w, batch):
        raise NotImplementedError

    def component_gradient(self, w, i):
        return self.batch_gradient(w, np.array([i]))

    def hessian_vector_product(self, w, batch, v):
        raise CapabilityError(f"{self.name}: no Hessian-vector product")

    def gauss_newton_vector_product(self, w, batch, v, variant):
        raise CapabilityError(f"{self.name}: Gauss-Newton variant {variant!r} unsupported")

    def curvature_diagonal(self, w, batch):
        raise CapabilityError(f"{self.name}: no curvature diagonal")

    # reference optimum
    @property
    def f_star(self):
        return self.reference()[1]

    @property
    def w_star(self):
        return self.reference()[0]

    def reference(self):
        raise CapabilityError(f"{self.name}: no reference optimum")

    def gap(self, w):
        return self.value(w) - self.f_star

    # stochastic oracle
    def sample_gradient(self, w, batch: Batch, stream: RandomStream):
        """Batch-average gradient plus the average of |batch| noise draws.

        The average of b independent N(0, (M/d) I) draws is drawn directly as
        a single N(0, (M/(d b)) I) vector.
        """
        g = self.batch_gradient(w, batch)
        if self.noise > 0:
            b = batch.size
            g = g + math.sqrt(self.noise / (self.d * b)) * stream.normal(batch.k, "noise", self.d)
        return g

    def sample_gradients(self, w, batch: Batch, stream: RandomStream):
        """Per-sample stochastic gradients, one row per batch member."""
        idx = batch.indices
        G = np.array([self.component_gradient(w, i) for i in idx])
        if self.noise > 0:
            b = len(idx)
            z = stream.normal(batch.k, "noise-each", b * self.d).reshape(b, self.d)
            G = G + math.sqrt(self.noise / self.d) * z
        return G

    def require_nonempty(self):
        if self.n < 1:
            raise InvalidArgument("problem has no components")


# --- quadratic ensembles ------------------------------------------------------

class QuadraticEnsembleProblem(Problem):
    """f_i(w) = 1/2 (w - m_i)^T Q_i (w - m_i)."""
    name = "quadratic"

    def __init__(self, Qs, ms, noise=0.0, name=None):
        Qs = np.asarray(Qs, dtype=float)
        ms = np.asarray(ms, dtype=float)
        if Qs.ndim == 2:
            Qs = Qs[None]
        if ms.ndim == 1:
            ms = ms[None]
        if Qs.shape[0] != ms.shape[0] or Qs.shape[1:] != (ms.shape[1],) * 2:
            raise InvalidArgument("inconsistent shapes for Q_i and m_i")
        if not np.allclose(Qs, np.transpose(Qs, (0, 2, 1))):
            raise InvalidArgument("Q_i must be symmetric")
        self.Qs, self.ms = Qs, ms
        self.n, self.d = ms.shape
        self.noise = float(noise)
        if name:
            self.name = name
        self.Qbar = Qs.mean(axis=0)
        self.Qm = np.einsum("nij,nj->ni", Qs, ms)
        self.bbar = self.Qm.mean(axis=0)
        ev = np.linalg.eigvalsh(self.Qbar)
        if ev[0] <= 0:
            raise InvalidArgument("average Q must be positive definite")
        if np.linalg.eigvalsh(Qs).min() < -1e-12 * max(1.0, ev[-1]):
            raise InvalidArgument("each Q_i must be positive semidefinite")
        self.c, self.L = float(ev[0]), float(ev[-1])
        self.L_component = float(np.linalg.eigvalsh(Qs).max())
        self._w_star = np.linalg.solve(self.Qbar, self.bbar)
        self._f_star = self.value(self._w_star)
        self.f_inf = self._f_star

    def reference(self):
        return self._w_star, self._f_star

    def component_value(self, w, i):
        r = w - self.ms[i]
        return 0.5 * float(r @ (self.Qs[i] @ r))

    def batch_value(self, w, batch):
        idx = _idx(batch)
        if idx is None:
            idx = np.arange(self.n)
        r = w - self.ms[idx]
        return 0.5 * float(np.mean(np.einsum("ni,nij,nj->n", r, self.Qs[idx], r)))

    def value(self, w):
        if self.n == 1:
            r = w - self.ms[0]
            return 0.5 * float(r @ (self.Qs[0] @ r))
        return self.batch_value(w, None)

    def component_gradient(self, w, i):
        return self.Qs[i] @ (w - self.ms[i])

    def batch_gradient(self, w, batch):
        idx = _idx(batch)
        if self.n == 1:
            return self.Qs[0] @ (w - self.ms[0])
        if idx is None:
            idx = np.arange(self.n)
        if len(idx) == 1:
            i = idx[0]
            return self.Qs[i] @ (w - self.ms[i])
        return np.einsum("nij,nj->ni", self.Qs[idx], w - self.ms[idx]).mean(axis=0)

    def gradient(self, w):
        return self.batch_gradient(w, None)

    def hessian_vector_product(self, w, batch, v):
        idx = _idx(batch)
        if self.n == 1:
            return self.Qs[0] @ v
        if idx is None:
            idx = np.arange(self.n)
        return np.einsum("nij,j->ni", self.Qs[idx], v).mean(axis=0)

    def gauss_newton_vector_product(self, w, batch, v, variant="plain"):
        # quadratics are their own Gauss-Newton model
        if variant != "plain":
            return super().gauss_newton_vector_product(w, batch, v, variant)
        return self.hessian_vector_product(w, batch, v)

    def curvature_diagonal(self, w, batch):
        idx = _idx(batch)
        if idx is None:
            idx = np.arange(self.n)
        return np.einsum("nii->ni", self.Qs[idx]).mean(axis=0)

    def coordinate_lipschitz(self):
        return np.diag(self.Qbar).copy()

    def gap(self, w):
        r = w - self._w_star
        return 0.5 * float(r @ (self.Qbar @ r))


def identity_quadratic(d, noise=0.0):
    """F(w) = 1/2 ||w||^2 (c = L = 1), optionally with the noisy oracle."""
    return QuadraticEnsembleProblem(np.eye(d), np.zeros(d), noise=noise, name="identity-quadratic")


def diagonal_quadratic(diag, noise=0.0, center=None):
    diag = np.asarray(diag, float)
    m = np.zeros_like(diag) if center is None else np.asarray(center, float)
    return QuadraticEnsembleProblem(np.diag(diag), m, noise=noise, name="diagonal-quadratic")


def spread_quadratic_ensemble(n, d, seed=0, cond=10.0, spread=1.0, noise=0.0):
    """n quadratics sharing a random SPD curvature, minimizers evenly spaced on a line."""
    st = RandomStream(seed)
    A = st.normal_block(0, "quad-basis", d * d).reshape(d, d)
    U, _ = np.linalg.qr(A)
    ev = np.geomspace(1.0, cond, d)
    Q = (U * ev) @ U.T
    Q = 0.5 * (Q + Q.T)
    direction = U[:, 0]
    t = np.linspace(-spread, spread, n)
    ms = t[:, None] * direction[None, :]
    return QuadraticEnsembleProblem(np.repeat(Q[None], n, axis=0), ms, noise=noise,
                                    name="spread-quadratic")


# --- nonconvex test function --------------------------------------------------

class DoubleWellProblem(Problem):
    """F(w) = 1/4 (w_1^2 - 1)^2 + 1/2 w_2^2 on the box [-2, 2]^2.

    Two minimizers (+-1, 0) with F_inf = 0.  The Hessian is
    diag(3 w_1^2 - 1, 1), so grad F is 11-Lipschitz on the box.
    """
    name = "double-well"
    n = 1
    d = 2
    box = 2.0

    def __init__(self, noise=0.0):
        self.noise = float(noise)
        self.L = 3 * self.box ** 2 - 1.0
        self.f_inf = 0.0

    def value(self, w):
        return 0.25 * (w[0] ** 2 - 1.0) ** 2 + 0.5 * w[1] ** 2

    def component_value(self, w, i):
        return self.value(w)

    def batch_value(self, w, batch):
        return self.value(w)

    def batch_gradient(self, w, batch):
        return np.array([w[0] ** 3 - w[0], w[1]])

    def component_gradient(self, w, i):
        return self.batch_gradient(w, None)

    def hessian_vector_product(self, w, batch, v):
        return np.array([(3 * w[0] ** 2 - 1.0) * v[0], v[1]])

    def project(self, w):
        return np.clip(w, -self.box, self.box)

    def reference(self):
        return np.array([1.0, 0.0]), 0.0


# --- linear prediction models -------------------------------------------------

class LinearModelProblem(Problem):
    """F(w) = (1/n) sum_i phi(x_i^T w, y_i) + (lam/2)||w||^2."""

    def __init__(self, data: Dataset, lam=0.0, name=None):
        if lam < 0:
            raise InvalidArgument("regularization must be nonnegative")
        self.data = data
        self.X = data.X
        self.y = np.asarray(data.y, float)
        self.n, self.d = data.n, data.d
        self.lam = float(lam)
        self.sparse = sp.issparse(self.X)
        if name:
            self.name = name
        if self.n:
            sq = self.row_norms_sq()
            self.L = self.lam + self.curv_bound * float(sq.mean())
            self.L_component = self.lam + self.curv_bound * float(sq.max())
        self._ref = None
        self._Xc = None

    curv_bound = 1.0

    # loss hooks
    def phi(self, z, y):
        raise NotImplementedError

    def dphi(self, z, y):
        raise NotImplementedError

    def d2phi(self, z, y):
        raise NotImplementedError

    def row_norms_sq(self):
        if self.sparse:
            return np.asarray(self.X.multiply(self.X).sum(axis=1)).ravel()
        return np.einsum("ij,ij->i", self.X, self.X)

    def col_norms_sq(self):
        if self.sparse:
            return np.asarray(self.X.multiply(self.X).sum(axis=0)).ravel()
        return np.einsum("ij,ij->j", self.X, self.X)

    def rows(self, idx):
        return self.X if idx is None else self.X[idx]

    def margins(self, w, idx=None):
        return self.rows(idx) @ w

    def labels(self, idx):
        return self.y if idx is None else self.y[idx]

    # values and gradients
    def batch_value(self, w, batch):
        idx = _idx(batch)
        z = self.margins(w, idx)
        return float(np.mean(self.phi(z, self.labels(idx)))) + 0.5 * self.lam * float(w @ w)

    def value(self, w):
        return self.batch_value(w, None)

    def component_value(self, w, i):
        return self.batch_value(w, np.array([i]))

    def loss_gradient(self, w, idx):
        """Gradient of the averaged loss term only (no regularizer)."""
        Xs = self.rows(idx)
        s = self.dphi(Xs @ w, self.labels(idx))
        m = self.n if idx is None else len(idx)
        return (Xs.T @ s) / m

    def batch_gradient(self, w, batch):
        idx = _idx(batch)
        return self.loss_gradient(w, idx) + self.lam * w

    def component_gradient(self, w, i):
        cols, vals = self.data.row(i) if self.sparse else (None, self.X[i])
        if self.sparse:
            z = vals @ w[cols]
            g = self.lam * w
            g[cols] += self.dphi(z, self.y[i]) * vals
            return g
        z = vals @ w
        return self.dphi(z, self.y[i]) * vals + self.lam * w

    def component_scalar(self, w, i):
        """phi'(x_i^T w, y_i): the per-component scalar of a linear-prediction gradient."""
        if self.sparse:
            cols, vals = self.data.row(i)
            return float(self.dphi(vals @ w[cols], self.y[i]))
        return float(self.dphi(self.X[i] @ w, self.y[i]))

    def add_row(self, g, i, scale):
        """g += scale * x_i in place."""
        if self.sparse:
            cols, vals = self.data.row(i)
            g[cols] += scale * vals
        else:
            g += scale * self.X[i]
        return g

    # curvature
    def hessian_vector_product(self, w, batch, v):
        idx = _idx(batch)
        Xs = self.rows(idx)
        h = self.d2phi(Xs @ w, self.labels(idx))
        m = self.n if idx is None else len(idx)
        return (Xs.T @ (h * (Xs @ v))) / m + self.lam * v

    def hessian_dense(self, w, batch=None):
        idx = _idx(batch)
        Xs = self.rows(idx)
        h = self.d2phi(Xs @ w, self.labels(idx))
        m = self.n if idx is None else len(idx)
        if sp.issparse(Xs):
            H = (Xs.T @ sp.diags(h) @ Xs).toarray() / m
        else:
            H = (Xs.T * h) @ Xs / m
        return H + self.lam * np.eye(self.d)

    def gradient_lipschitz_diag(self):
        """Per-coordinate Lipschitz constants of grad F."""
        return self.curv_bound * self.col_norms_sq() / self.n + self.lam

    coordinate_lipschitz = gradient_lipschitz_diag

    # reference optimum by damped Newton with dense solves (independent of the
    # Newton-CG solver so that the two can be checked against each other)
    def reference(self, tol=1e-12, max_iter=200):
        if self._ref is not None:
            return self._ref
        w = np.zeros(self.d)
        for _ in range(max_iter):
            g = self.gradient(w)
            gn = np.linalg.norm(g)
            if gn <= tol:
                break
            H = self.hessian_dense(w)
            p = -np.linalg.solve(H, g)
            f0, t = self.value(w), 1.0
            # near the optimum f is flat to rounding; judge the full step by the gradient
            if np.linalg.norm(self.gradient(w + p)) < 0.5 * gn:
                w = w + p
                continue
            while self.value(w + t * p) > f0 + 1e-4 * t * (g @ p) and t > 1e-10:
                t *= 0.5
            w_new = w + t * p
            if np.array_equal(w_new, w):
                break
            w = w_new
        self._ref = (w, self.value(w))
        return self._ref

    def set_reference(self, w_star):
        w_star = np.asarray(w_star, float)
        self._ref = (w_star, self.value(w_star))


class LogisticProblem(LinearModelProblem):
    """Regularized logistic regression with labels in {-1, +1}."""
    name = "logistic"
    curv_bound = 0.25

    def __init__(self, data: Dataset, lam=0.0, name=None):
        y = np.asarray(data.y)
        if y.size and not np.all((y == 1) | (y == -1)):
            raise InvalidArgument("logistic labels must be -1 or +1")
        super().__init__(data, lam, name)
        self.c = self.lam

    def phi(self, z, y):
        return np.logaddexp(0.0, -y * z)

    def dphi(self, z, y):
        return -y * expit(-y * z)

    def d2phi(self, z, y):
        return expit(z) * expit(-z)

    def gauss_newton_vector_product(self, w, batch, v, variant="generalized"):
        """Curvature surrogates of the log-loss term, plus lam*v for the ridge term.

        generalized: prediction h = sigmoid(y x^T w) with loss -log h, giving
        J^T H_loss J = (1 - h)^2 x x^T per sample.
        log-loss-fisher: average of grad l_i grad l_i^T applied to v.
        """
        idx = _idx(batch)
        Xs = self.rows(idx)
        y = self.labels(idx)
        m = self.n if idx is None else len(idx)
        z = Xs @ w
        if variant == "generalized":
            h = expit(y * z)
            wt = (1.0 - h) ** 2
            return (Xs.T @ (wt * (Xs @ v))) / m + self.lam * v
        if variant == "log-loss-fisher":
            s = self.dphi(z, y)                  # grad l_i = s_i x_i
            return (Xs.T @ (s * (s * (Xs @ v)))) / m + self.lam * v
        raise CapabilityError(f"logistic: Gauss-Newton variant {variant!r} unsupported")

    def fisher_vector_product(self, w, batch, v):
        return self.gauss_newton_vector_product(w, batch, v, "log-loss-fisher")

    def curvature_diagonal(self, w, batch):
        idx = _idx(batch)
        Xs = self.rows(idx)
        y = self.labels(idx)
        m = self.n if idx is None else len(idx)
        wt = expit(-y * (Xs @ w)) ** 2
        if sp.issparse(Xs):
            sq = Xs.multiply(Xs)
            return np.asarray(sq.T @ wt).ravel() / m + self.lam
        return (Xs * Xs).T @ wt / m + self.lam


class LeastSquaresProblem(LinearModelProblem):
    """F(w) = (1/(2n)) ||X w - y||^2 + (lam/2)||w||^2."""
    name = "least-squares"
    curv_bound = 1.0

    def __init__(self, data: Dataset, lam=0.0, name=None):
        super().__init__(data, lam, name)
        self._H = None
        if self.n and self.d <= 2000:
            H = self.hessian_dense(np.zeros(self.d))
            ev = np.linalg.eigvalsh(H)
            self._H = H
            self.c, self.L = float(ev[0]), float(ev[-1])
            self.c = self.c if self.c > 1e-12 * self.L else 0.0

    def phi(self, z, y):
        return 0.5 * (z - y) ** 2

    def dphi(self, z, y):
        return z - y

    def d2phi(self, z, y):
        return np.ones_like(z)

    def gauss_newton_vector_product(self, w, batch, v, variant="plain"):
        if variant != "plain":
            raise CapabilityError(f"least squares: Gauss-Newton variant {variant!r} unsupported")
        idx = _idx(batch)
        Xs = self.rows(idx)
        m = self.n if idx is None else len(idx)
        return (Xs.T @ (Xs @ v)) / m + self.lam * v

    def curvature_diagonal(self, w, batch):
        idx = _idx(batch)
        Xs = self.rows(idx)
        m = self.n if idx is None else len(idx)
        if sp.issparse(Xs):
            return np.asarray(Xs.multiply(Xs).sum(axis=0)).ravel() / m + self.lam
        return np.einsum("ij,ij->j", Xs, Xs) / m + self.lam

    def reference(self, tol=None, max_iter=None):
        if self._ref is None:
            b = (self.X.T @ self.y) / self.n
            H = self._H if self._H is not None else self.hessian_dense(np.zeros(self.d))
            w = np.linalg.lstsq(H, b, rcond=None)[0]
            self._ref = (w, self.value(w))
        return self._ref

    def gap(self, w):
        if self._H is None or self.c == 0.0:
            return self.value(w) - self.f_star
        r = w - self.w_star
        return 0.5 * float(r @ (self._H @ r))


class CompositeL1Problem(Problem):
    """phi(w) = F(w) + lam1 ||w||_1 over a smooth problem F."""
    name = "composite-l1"

    def __init__(self, smooth: Problem, lam1: float):
        if not lam1 > 0:
            raise InvalidArgument("l1 weight must be positive")
        self.smooth = smooth
        self.lam1 = float(lam1)
        self.n, self.d = smooth.n, smooth.d
        self.c, self.L = smooth.c, smooth.L
        self.noise = smooth.noise
        self.name = f"{smooth.name}+l1"
        self._ref = None

    def value(self, w):
        return self.smooth.value(w) + self.lam1 * float(np.sum(np.abs(w)))

    phi = value

    def smooth_value(self, w):
        return self.smooth.value(w)

    def smooth_gradient(self, w):
        return self.smooth.gradient(w)

    def batch_value(self, w, batch):
        return self.smooth.batch_value(w, batch) + self.lam1 * float(np.sum(np.abs(w)))

    def batch_gradient(self, w, batch):
        return self.smooth.batch_gradient(w, batch)

    def sample_gradient(self, w, batch, stream):
        return self.smooth.sample_gradient(w, batch, stream)

    def hessian_vector_product(self, w, batch, v):
        return self.smooth.hessian_vector_product(w, batch, v)

    def gradient(self, w):
        """Minimum-norm subgradient of phi (zero exactly at optimality)."""
        from .regularized import min_norm_subgradient
        return min_norm_subgradient(w, self.smooth.gradient(w), self.lam1)

    def reference(self):
        if self._ref is None:
            from .regularized import reference_solution
            w = reference_solution(self)
            self._ref = (w, self.value(w))
        return self._ref


# --- synthetic generators -----------------------------------------------------

def make_classification(n, d, seed=0, scale=1.0, flip=0.0, density=1.0, normalize=True):
    """Rows ~ N(0, I/d) (unit norm if ``normalize``), labels from a logistic model."""
    st = RandomStream(seed)
    X = st.normal_block(0, "features", n * d).reshape(n, d) / math.sqrt(d)
    if density < 1.0:
        keep = st.uniform_block(0, "mask", n * d).reshape(n, d) < density
        X = X * keep
    if normalize:
        nrm = np.linalg.norm(X, axis=1)
        nrm[nrm == 0] = 1.0
        X = X / nrm[:, None]
    w_true = scale * st.normal_block(0, "truth", d)
    p = expit(X @ w_true)
    y = np.where(st.uniform_block(0, "labels", n) < p, 1.0, -1.0)
    if flip > 0:
        f = st.uniform_block(0, "flip", n) < flip
        y[f] = -y[f]
    return Dataset(X, y)


def make_regression(n, d, seed=0, noise=0.1, sparse_truth=None):
    st = RandomStream(seed)
    X = st.normal_block(0, "features", n * d).reshape(n, d)
    w_true = st.normal_block(0, "truth", d)
    if sparse_truth is not None:
        w_true[sparse_truth:] = 0.0
    y = X @ w_true + noise * st.normal_block(0, "residual", n)
    return Dataset(X, y)
