"""Epsilon support vector regression with a squared exponential kernel.

The dual problem is solved by sequential minimal optimization over the
``2m`` variables ``beta = [a, a*]`` with ``c = a - a*``::

    min 1/2 beta^T Q beta + p^T beta
    s.t. sum(s * beta) = 0,  0 <= beta <= lam

with ``s = [1, -1]``, ``Q_ij = s_i s_j k(x_i, x_j)`` and
``p = [eps - y, eps + y]``.  Pairs are chosen by second order working set
selection and iterations stop when the maximal KKT violation drops below
``tol``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .gp import Normalizer

TAU = 1e-12


def rbf_kernel(A, B, width):
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-np.maximum(d2, 0.0) / (2.0 * width ** 2))


@dataclass
class SmoResult:
    coef: np.ndarray
    bias: float
    kkt_gap: float
    iterations: int
    converged: bool


@njit(cache=True)
def _smo_loop(K, y, lam, eps, tol, max_iter):
    m = y.size
    n2 = 2 * m
    s = np.empty(n2)
    idx = np.empty(n2, dtype=np.int64)
    G = np.empty(n2)
    for t in range(m):
        s[t], s[m + t] = 1.0, -1.0
        idx[t], idx[m + t] = t, t
        G[t], G[m + t] = eps - y[t], eps + y[t]
    beta = np.zeros(n2)
    it = 0
    gap = np.inf
    while it < max_iter:
        # i: maximal violator in the "up" set
        g_max = -np.inf
        i = -1
        g_min = np.inf
        for t in range(n2):
            sc = -s[t] * G[t]
            if (s[t] > 0 and beta[t] < lam) or (s[t] < 0 and beta[t] > 0):
                if sc > g_max:
                    g_max, i = sc, t
            if (s[t] > 0 and beta[t] > 0) or (s[t] < 0 and beta[t] < lam):
                if sc < g_min:
                    g_min = sc
        if i < 0 or g_min == np.inf:
            gap = 0.0
            break
        gap = g_max - g_min
        if gap <= tol:
            break
        # j: second order choice among violating "low" variables
        ii = idx[i]
        j = -1
        best = np.inf
        for t in range(n2):
            if (s[t] > 0 and beta[t] > 0) or (s[t] < 0 and beta[t] < lam):
                b = g_max + s[t] * G[t]
                if b > 0:
                    a = K[ii, ii] + K[idx[t], idx[t]] - 2.0 * K[ii, idx[t]]
                    if a <= 0:
                        a = TAU
                    v = -(b * b) / a
                    if v < best:
                        best, j = v, t
        if j < 0:
            break
        jj = idx[j]
        quad = K[ii, ii] + K[jj, jj] - 2.0 * K[ii, jj]
        if quad <= 0:
            quad = TAU
        old_i, old_j = beta[i], beta[j]
        if s[i] != s[j]:
            delta = (-G[i] - G[j]) / quad
            diff = old_i - old_j
            bi, bj = old_i + delta, old_j + delta
            if diff > 0:
                if bj < 0:
                    bj, bi = 0.0, diff
            elif bi < 0:
                bi, bj = 0.0, -diff
            if diff > 0:
                if bi > lam:
                    bi, bj = lam, lam - diff
            elif bj > lam:
                bj, bi = lam, lam + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = old_i + old_j
            bi, bj = old_i - delta, old_j + delta
            if total > lam:
                if bi > lam:
                    bi, bj = lam, total - lam
            elif bj < 0:
                bj, bi = 0.0, total
            if total > lam:
                if bj > lam:
                    bj, bi = lam, total - lam
            elif bi < 0:
                bi, bj = 0.0, total
        d_i, d_j = bi - old_i, bj - old_j
        beta[i], beta[j] = bi, bj
        # G_t += Q_ti d_i + Q_tj d_j with Q_tu = s_t s_u K
        for t in range(n2):
            G[t] += s[t] * (s[i] * d_i * K[ii, idx[t]] + s[j] * d_j * K[jj, idx[t]])
        it += 1
    return beta, G, gap, it


def smo_solve(K, y, lam, eps, tol=1e-6, max_iter=1000000):
    """Solve the epsilon-SVR dual for a precomputed kernel matrix.

    Returns the coefficients ``c = a - a*`` and the bias ``b`` such that
    ``f(x) = sum_i c_i k(x, x_i) + b``.
    """
    K = np.ascontiguousarray(K, dtype=float)
    y = np.ascontiguousarray(y, dtype=float).ravel()
    m = y.size
    beta, G, gap, it = _smo_loop(K, y, float(lam), float(eps), float(tol), int(max_iter))
    s = np.concatenate([np.ones(m), -np.ones(m)])
    coef = beta[:m] - beta[m:]
    free = (beta > 0) & (beta < lam)
    if free.any():
        bias = float(np.mean(-s[free] * G[free]))
    else:
        score = -s * G
        up = ((s > 0) & (beta < lam)) | ((s < 0) & (beta > 0))
        low = ((s > 0) & (beta > 0)) | ((s < 0) & (beta < lam))
        hi = np.max(score[up]) if up.any() else 0.0
        lo = np.min(score[low]) if low.any() else 0.0
        bias = float(0.5 * (hi + lo))
    return SmoResult(coef, bias, float(gap), int(it), bool(gap <= tol))


def kkt_residual(K, y, coef, lam, eps):
    """Maximal violating-pair gap of a dual solution ``coef = a - a*``."""
    m = len(y)
    a = np.maximum(coef, 0.0)
    a_star = np.maximum(-coef, 0.0)
    beta = np.concatenate([a, a_star])
    s = np.concatenate([np.ones(m), -np.ones(m)])
    Kc = K @ coef
    G = np.concatenate([Kc + eps - y, -Kc + eps + y])
    score = -s * G
    up = ((s > 0) & (beta < lam)) | ((s < 0) & (beta > 0))
    low = ((s > 0) & (beta > 0)) | ((s < 0) & (beta < lam))
    return float(np.max(score[up]) - np.min(score[low]))


@dataclass
class SvrModel:
    """Trained epsilon-SVR for one response."""

    X_train: np.ndarray
    coef: np.ndarray
    bias: float
    width: float
    lam: float
    eps: float
    x_norm: Normalizer
    y_mean: float
    y_scale: float
    kkt_gap: float = 0.0
    converged: bool = True
    cv_mae: float = float("nan")
    history: list = field(default_factory=list)

    family = "svr"

    def predict(self, X_query, chunk=20000):
        Xq = np.atleast_2d(np.asarray(X_query, dtype=float))
        if Xq.shape[1] != self.X_train.shape[1]:
            raise ValueError(f"expected {self.X_train.shape[1]} inputs, got {Xq.shape[1]}")
        sv = np.abs(self.coef) > 0
        out = np.full(Xq.shape[0], self.bias)
        if sv.any():
            Z = self.x_norm.forward(Xq)
            Xs, cs = self.X_train[sv], self.coef[sv]
            for start in range(0, Z.shape[0], chunk):
                out[start:start + chunk] += rbf_kernel(Z[start:start + chunk], Xs, self.width) @ cs
        return out * self.y_scale + self.y_mean

    def summary(self):
        return {
            "family": "svr",
            "lambda": self.lam,
            "epsilon": self.eps,
            "width": self.width,
            "n_support": int(np.count_nonzero(self.coef)),
            "kkt_gap": self.kkt_gap,
            "converged": self.converged,
            "cv_mae": self.cv_mae,
        }


def svr_fit(X, y, lam, eps, width, tol=1e-6, max_iter=1000000):
    """Fit with fixed hyperparameters (inputs/outputs normalized internally)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    x_norm = Normalizer.fit(X)
    Z = x_norm.forward(X)
    y_mean = float(y.mean())
    y_sd = float(y.std())
    if y_sd <= 1e-12 * max(1.0, abs(y_mean)):
        return SvrModel(Z, np.zeros(y.size), 0.0, width, lam, eps, x_norm, y_mean, 1.0)
    t = (y - y_mean) / y_sd
    res = smo_solve(rbf_kernel(Z, Z, width), t, lam, eps, tol=tol, max_iter=max_iter)
    return SvrModel(Z, res.coef, res.bias, width, lam, eps, x_norm, y_mean, y_sd, res.kkt_gap, res.converged)


def kfold_indices(m, k, rng):
    perm = rng.permutation(m)
    return np.array_split(perm, k)


def cv_mae(fit, X, y, folds):
    """Cross-validated mean absolute error of ``fit(X, y) -> model``."""
    errs = []
    for test in folds:
        train = np.setdiff1d(np.arange(len(y)), test)
        model = fit(X[train], y[train])
        errs.append(np.abs(model.predict(X[test]) - y[test]))
    return float(np.mean(np.concatenate(errs)))


LAMBDA_RANGE = (1e-1, 1e3)
EPS_RANGE = (1e-3, 1e0)
WIDTH_RANGE = (1e-2, 1e2)


def svr_train(X, y, tuning_levels=3, grid_points=5, n_folds=5, rng=None, tol=1e-6,
              cv_max_iter=20000):
    """Tune ``(lambda, epsilon, width)`` by cross-validated MAE and fit.

    Each level sweeps every hyperparameter over a log grid with the others
    fixed, then halves the grid around the best value (clipped to the
    initial range).  ``epsilon`` is relative to the standard deviation of
    ``y`` since the fit works on normalized outputs.  Cross-validation fits
    stop after ``cv_max_iter`` pair updates; the final fit runs to ``tol``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    m = y.size
    if m < n_folds:
        raise ValueError(f"need at least {n_folds} points for {n_folds}-fold CV")
    rng = np.random.default_rng(rng)
    if y.std() <= 1e-12 * max(1.0, abs(y.mean())):
        return svr_fit(X, y, 1.0, 0.1, 1.0)
    folds = kfold_indices(m, n_folds, rng)
    limits = [np.log10(LAMBDA_RANGE), np.log10(EPS_RANGE), np.log10(WIDTH_RANGE)]
    ranges = [r.copy() for r in limits]
    current = [1.0, -1.0, 0.0]
    cache = {}

    def score(params):
        key = tuple(round(p, 10) for p in params)
        if key not in cache:
            lam, eps, width = (10.0 ** p for p in params)
            cache[key] = cv_mae(lambda a, b: svr_fit(a, b, lam, eps, width, tol, cv_max_iter), X, y, folds)
        return cache[key]

    best = score(current)
    history = []
    for level in range(tuning_levels):
        for d in range(3):
            lo, hi = ranges[d]
            for v in np.linspace(lo, hi, grid_points):
                trial = list(current)
                trial[d] = float(v)
                val = score(trial)
                if val < best:
                    best, current = val, trial
            half = 0.25 * (hi - lo)
            ranges[d] = np.clip([current[d] - half, current[d] + half], *limits[d])
        history.append((level, list(current), best))
    lam, eps, width = (10.0 ** p for p in current)
    model = svr_fit(X, y, lam, eps, width, tol)
    model.cv_mae = best
    model.history = history
    return model
