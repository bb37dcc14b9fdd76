"""Zero-mean Gaussian process regression with a composite stationary kernel.

The kernel is the sum of a squared exponential, a rational quadratic
(shape 1) and Matern kernels with nu = 0.5, 1.5 and 2.5.  Each sub-kernel
has its own anisotropic length scale vector and variance.  Hyperparameters
are fitted by maximizing the log marginal likelihood in log space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import linalg, optimize

log = logging.getLogger(__name__)

KERNELS = ("se", "rq", "matern12", "matern32", "matern52")
N_KERNELS = len(KERNELS)
NUGGET = 1e-10
LOG_LENGTH_BOUNDS = (-4.0, 4.0)
LOG_VARIANCE_BOUNDS = (-9.0, 3.0)
RQ_ALPHA = 1.0
_S3 = math.sqrt(3.0)
_S5 = math.sqrt(5.0)


class IllConditionedError(RuntimeError):
    """Covariance matrix could not be factorized even with jitter."""


def unpack(theta, n):
    """Split log-hyperparameters into length scales ``(5, n)`` and variances ``(5,)``."""
    theta = np.asarray(theta, dtype=float)
    ls = np.exp(theta[: N_KERNELS * n]).reshape(N_KERNELS, n)
    var = np.exp(theta[N_KERNELS * n:])
    return ls, var


def pack(lengthscales, variances):
    return np.concatenate([np.log(np.asarray(lengthscales, dtype=float)).ravel(),
                           np.log(np.asarray(variances, dtype=float))])


def _sq_dist(A, B, ls):
    a = A / ls
    b = B / ls
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def _kernel_from_r2(kind, r2, var):
    if kind == "se":
        return var * np.exp(-0.5 * r2)
    if kind == "rq":
        return var * (1.0 + r2 / (2.0 * RQ_ALPHA)) ** (-RQ_ALPHA)
    r = np.sqrt(r2)
    if kind == "matern12":
        return var * np.exp(-r)
    if kind == "matern32":
        return var * (1.0 + _S3 * r) * np.exp(-_S3 * r)
    return var * (1.0 + _S5 * r + (5.0 / 3.0) * r2) * np.exp(-_S5 * r)


def kernel_matrix(A, B, theta):
    """Composite kernel between the rows of ``A`` and ``B`` (normalized inputs)."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    ls, var = unpack(theta, A.shape[1])
    K = np.zeros((A.shape[0], B.shape[0]))
    for s, kind in enumerate(KERNELS):
        K += _kernel_from_r2(kind, _sq_dist(A, B, ls[s]), var[s])
    return K


@numba.njit(cache=True, fastmath=True)
def _predict_loop(Z, X_train, inv_ls, var, alpha):
    # composite kernel times alpha, one query row at a time
    q, n = Z.shape
    m = X_train.shape[0]
    out = np.empty(q)
    for i in range(q):
        acc = 0.0
        for j in range(m):
            r0 = r1 = r2 = r3 = r4 = 0.0
            for d in range(n):
                diff = Z[i, d] - X_train[j, d]
                dd = diff * diff
                r0 += dd * inv_ls[0, d]
                r1 += dd * inv_ls[1, d]
                r2 += dd * inv_ls[2, d]
                r3 += dd * inv_ls[3, d]
                r4 += dd * inv_ls[4, d]
            k = var[0] * math.exp(-0.5 * r0) + var[1] / (1.0 + 0.5 * r1)
            k += var[2] * math.exp(-math.sqrt(r2))
            r = _S3 * math.sqrt(r3)
            k += var[3] * (1.0 + r) * math.exp(-r)
            r = _S5 * math.sqrt(r4)
            k += var[4] * (1.0 + r + r * r / 3.0) * math.exp(-r)
            acc += k * alpha[j]
        out[i] = acc
    return out


def _factor(K, nugget, max_retries):
    m = K.shape[0]
    base = K + nugget * np.eye(m)
    jitter = 1e-10 * float(np.mean(np.diag(K))) if m else 0.0
    for attempt in range(max_retries + 1):
        try:
            mat = base if attempt == 0 else base + jitter * 10 ** (attempt - 1) * np.eye(m)
            return linalg.cho_factor(mat, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
    raise IllConditionedError("covariance matrix is not positive definite")


def gp_log_likelihood(theta, X, y, nugget=NUGGET, max_retries=3, return_grad=False):
    """Log marginal likelihood of normalized data.

    ``-m/2 log(2 pi) - 1/2 log|K + nugget I| - 1/2 y^T (K + nugget I)^-1 y``

    Raises :class:`IllConditionedError` if the factorization fails after
    ``max_retries`` jitter increments.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    m, n = X.shape
    ls, var = unpack(theta, n)
    diff2 = (X[:, None, :] - X[None, :, :]) ** 2
    K = np.zeros((m, m))
    parts = []
    for s, kind in enumerate(KERNELS):
        r2 = diff2 @ (1.0 / ls[s] ** 2)
        Ks = _kernel_from_r2(kind, r2, var[s])
        K += Ks
        parts.append((r2, Ks))
    cf = _factor(K, nugget, max_retries)
    alpha = linalg.cho_solve(cf, y, check_finite=False)
    logdet = 2.0 * np.log(np.diag(cf[0])).sum()
    ll = -0.5 * m * math.log(2 * math.pi) - 0.5 * logdet - 0.5 * float(y @ alpha)
    if not return_grad:
        return ll
    W = np.outer(alpha, alpha) - linalg.cho_solve(cf, np.eye(m), check_finite=False)
    g_ls = np.empty((N_KERNELS, n))
    g_var = np.empty(N_KERNELS)
    for s, kind in enumerate(KERNELS):
        r2, Ks = parts[s]
        g_var[s] = 0.5 * np.sum(W * Ks)
        # dK/dlog(l_d) = F * diff2_d / l_d^2
        if kind == "se":
            F = Ks
        elif kind == "rq":
            F = var[s] * (1.0 + r2 / (2.0 * RQ_ALPHA)) ** (-RQ_ALPHA - 1.0)
        else:
            r = np.sqrt(r2)
            if kind == "matern12":
                with np.errstate(divide="ignore", invalid="ignore"):
                    F = np.where(r > 0, var[s] * np.exp(-r) / np.where(r > 0, r, 1.0), 0.0)
            elif kind == "matern32":
                F = 3.0 * var[s] * np.exp(-_S3 * r)
            else:
                F = (5.0 / 3.0) * var[s] * (1.0 + _S5 * r) * np.exp(-_S5 * r)
        g_ls[s] = 0.5 * np.einsum("ij,ijd->d", W * F, diff2) / ls[s] ** 2
    return ll, np.concatenate([g_ls.ravel(), g_var])


@dataclass
class Normalizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, A):
        A = np.asarray(A, dtype=float)
        mu = A.mean(axis=0)
        sd = A.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return cls(mu, sd)

    def forward(self, A):
        return (np.asarray(A, dtype=float) - self.mean) / self.scale

    def inverse(self, A):
        return np.asarray(A, dtype=float) * self.scale + self.mean


@dataclass
class GpModel:
    """Trained Gaussian process for one response."""

    X_train: np.ndarray
    alpha: np.ndarray
    theta: np.ndarray
    x_norm: Normalizer
    y_mean: float
    y_scale: float
    log_likelihood: float
    nugget: float = NUGGET
    constant: bool = False
    history: list = field(default_factory=list)

    family = "gp"

    @property
    def lengthscales(self):
        return unpack(self.theta, self.X_train.shape[1])[0]

    @property
    def variances(self):
        return unpack(self.theta, self.X_train.shape[1])[1]

    def predict(self, X_query, chunk=20000):
        Xq = np.atleast_2d(np.asarray(X_query, dtype=float))
        if Xq.shape[1] != self.X_train.shape[1]:
            raise ValueError(f"expected {self.X_train.shape[1]} inputs, got {Xq.shape[1]}")
        if self.constant:
            return np.full(Xq.shape[0], self.y_mean)
        Z = np.ascontiguousarray(self.x_norm.forward(Xq))
        ls, var = unpack(self.theta, Z.shape[1])
        out = _predict_loop(Z, np.ascontiguousarray(self.X_train), 1.0 / ls ** 2, var, self.alpha)
        return out * self.y_scale + self.y_mean

    def summary(self):
        return {
            "family": "gp",
            "log_likelihood": float(self.log_likelihood),
            "lengthscales": self.lengthscales.tolist(),
            "variances": self.variances.tolist(),
            "nugget": self.nugget,
        }


def _bounds(n):
    return [LOG_LENGTH_BOUNDS] * (N_KERNELS * n) + [LOG_VARIANCE_BOUNDS] * N_KERNELS


def default_theta(n):
    return pack(np.ones((N_KERNELS, n)), np.full(N_KERNELS, 1.0 / N_KERNELS))


def gp_train(X, y, restarts=8, rng=None, theta0=None, nugget=NUGGET, maxiter=200):
    """Fit a GP by multi-start type-II maximum likelihood.

    Parameters
    ----------
    X : (m, n) array
        Training inputs in physical units.
    y : (m,) array
        Training responses.
    restarts : int
        Number of local searches.  The first starts from ``theta0`` (or a
        default), the rest from uniform draws inside the log bounds.
    rng : numpy Generator
    theta0 : array, optional
        Warm start, e.g. the optimum of the previous refinement step.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    m, n = X.shape
    if m < 2:
        raise ValueError("need at least two training points")
    rng = np.random.default_rng(rng)
    x_norm = Normalizer.fit(X)
    Z = x_norm.forward(X)
    y_mean = float(y.mean())
    y_sd = float(y.std())
    if y_sd <= 1e-12 * max(1.0, abs(y_mean)):
        return GpModel(Z, np.zeros(m), default_theta(n), x_norm, y_mean, 1.0, 0.0, nugget, constant=True)
    t = (y - y_mean) / y_sd
    bounds = _bounds(n)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    starts = [np.clip(default_theta(n) if theta0 is None else np.asarray(theta0, dtype=float), lo, hi)]
    for _ in range(max(restarts, 1) - 1):
        starts.append(rng.uniform(lo, hi))

    def objective(th):
        try:
            ll, g = gp_log_likelihood(th, Z, t, nugget=nugget, return_grad=True)
        except IllConditionedError:
            return 1e25, np.zeros_like(th)
        if not np.isfinite(ll):
            return 1e25, np.zeros_like(th)
        return -ll, -g

    best_th, best_ll = None, -np.inf
    history = []
    for th0 in starts:
        f0, _ = objective(th0)
        res = optimize.minimize(objective, th0, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": maxiter})
        th, f = (res.x, res.fun) if res.fun <= f0 else (th0, f0)
        history.append((-f0, -f))
        if -f > best_ll:
            best_ll, best_th = -f, th
    if best_th is None or not np.isfinite(best_ll) or best_ll <= -1e24:
        raise IllConditionedError("all likelihood restarts were ill-conditioned")
    ls, var = unpack(best_th, n)
    diff2 = (Z[:, None, :] - Z[None, :, :]) ** 2
    K = sum(_kernel_from_r2(kind, diff2 @ (1.0 / ls[s] ** 2), var[s]) for s, kind in enumerate(KERNELS))
    cf = _factor(K, nugget, 3)
    alpha = linalg.cho_solve(cf, t, check_finite=False)
    return GpModel(Z, alpha, best_th, x_norm, y_mean, y_sd, best_ll, nugget, history=history)
