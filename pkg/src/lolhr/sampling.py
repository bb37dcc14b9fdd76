"""Latin hypercube designs and their optimization by simulated annealing.

The annealing objective combines a space-filling term and a correlation
term::

    f_M = f_D + f_rho
    f_D = log(d_max) - log(min pairwise distance)
    f_rho = log(max |rho_target - rho_local|)

Distances are measured after scaling the global sampling box to the unit
cube, so ``d_max = sqrt(n)``.  ``rho_local`` is the Pearson correlation of
the rows inside the local bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from .core import RandomVector

EPS_CORR = 1e-12


@dataclass
class LhsPlan:
    points: np.ndarray
    bins_per_dim: int
    fixed_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.fixed_mask is None:
            self.fixed_mask = np.zeros(self.points.shape[0], dtype=bool)


@dataclass(frozen=True)
class AnnealConfig:
    """Simulated annealing schedule.

    ``iterations=None`` means ``10 * m * n`` proposals for ``m`` free points
    in ``n`` dimensions.  The temperature is multiplied by ``cooling_rate``
    every ``cooling_interval`` proposals.
    """

    iterations: Optional[int] = None
    initial_temperature: float = 1.0
    cooling_rate: float = 0.95
    cooling_interval: int = 50
    rng_seed: Optional[int] = None

    def __post_init__(self):
        if self.iterations is not None and self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 < self.cooling_rate < 1.0:
            raise ValueError("cooling_rate must lie in (0, 1)")

    def n_proposals(self, m, n):
        return 10 * m * n if self.iterations is None else int(self.iterations)


@dataclass
class LhsMetrics:
    f_D: float
    f_rho: float
    f_M: float
    rho_flagged: bool = False


def lhs_generate(m: int, n: int, rng) -> LhsPlan:
    """Random Latin hypercube of ``m`` points in ``[0, 1]^n``."""
    if m < 1 or n < 1:
        raise ValueError("need m >= 1 and n >= 1")
    perms = np.argsort(rng.random((m, n)), axis=0)
    pts = (perms + rng.random((m, n))) / m
    return LhsPlan(pts, m)


def is_latin(points, bounds=None) -> bool:
    """True if every dimension has exactly one point per bin."""
    pts = np.asarray(points, dtype=float)
    if bounds is not None:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
        pts = (pts - lo) / (hi - lo)
    m = pts.shape[0]
    bins = np.minimum(np.floor(pts * m).astype(int), m - 1)
    return all(np.array_equal(np.sort(bins[:, j]), np.arange(m)) for j in range(pts.shape[1]))


def _unit(X, global_bounds):
    if global_bounds is None:
        return np.array(X, dtype=float)
    lo, hi = (np.asarray(b, dtype=float) for b in global_bounds)
    width = np.where(hi > lo, hi - lo, 1.0)
    return (np.asarray(X, dtype=float) - lo) / width


def _inside(X, bounds):
    lo, hi = bounds
    return np.all((X >= lo) & (X <= hi), axis=1)


def _corr(X):
    if X.shape[0] < 2:
        return None
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.corrcoef(X, rowvar=False)
    rho = np.atleast_2d(np.nan_to_num(rho, nan=0.0))
    np.fill_diagonal(rho, 1.0)
    return rho


def correlation_error(X, rho_target):
    rho = _corr(np.asarray(X, dtype=float))
    if rho is None:
        return None
    return float(np.max(np.abs(np.asarray(rho_target) - rho)))


def lhs_metrics(X, global_bounds=None, local_bounds=None, rho_target=None, n_fixed=0) -> LhsMetrics:
    """Space-filling and correlation metrics of a sample.

    Parameters
    ----------
    X : (m, n) array
        Points in physical units (or unit cube when ``global_bounds`` is None).
    global_bounds : (lower, upper), optional
        Sampling box used for scaling and ``d_max``.
    local_bounds : (lower, upper), optional
        Rows inside this box enter the correlation term; defaults to the
        global box.
    rho_target : (n, n) array, optional
        Target correlation, identity by default.
    n_fixed : int
        The first ``n_fixed`` rows are fixed; distances among them are
        ignored because no move of the free rows can change them.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("need at least two points")
    n = X.shape[1]
    U = _unit(X, global_bounds)
    d_min = _min_distance(U, n_fixed)
    if not d_min > 0:
        raise ValueError("duplicate points: minimum pairwise distance is zero")
    f_D = 0.5 * math.log(n) - math.log(d_min)
    if rho_target is None:
        rho_target = np.eye(n)
    if local_bounds is None:
        local = X if global_bounds is None else X[_inside(X, global_bounds)]
    else:
        local = X[_inside(X, local_bounds)]
    err = correlation_error(local, rho_target)
    flagged = err is None
    f_rho = 0.0 if flagged else math.log(max(err, EPS_CORR))
    return LhsMetrics(f_D, f_rho, f_D + f_rho, flagged)


def _min_distance(U, n_fixed=0):
    m = U.shape[0]
    if n_fixed <= 1:
        return float(pdist(U).min())
    if n_fixed >= m:
        return float(pdist(U).min())
    free = U[n_fixed:]
    d = np.sqrt(((free[:, None, :] - U[None, :, :]) ** 2).sum(-1))
    idx = np.arange(free.shape[0])
    d[idx, n_fixed + idx] = np.inf
    return float(d.min())


class _AnnealState:
    """Incremental bookkeeping of f_M under value swaps among free rows."""

    def __init__(self, X, n_fixed, global_bounds, local_bounds, rho_target):
        self.X = np.array(X, dtype=float)
        self.U = _unit(self.X, global_bounds)
        self.n_fixed = n_fixed
        self.m, self.n = self.X.shape
        self.log_dmax = 0.5 * math.log(self.n)
        self.local_bounds = local_bounds
        self.global_bounds = global_bounds
        self.rho_target = np.eye(self.n) if rho_target is None else np.asarray(rho_target, dtype=float)
        D2 = ((self.U[:, None, :] - self.U[None, :, :]) ** 2).sum(-1)
        np.fill_diagonal(D2, np.inf)
        if n_fixed > 1:
            D2[:n_fixed, :n_fixed] = np.inf
        self.D2 = D2

    def _local_rows(self):
        if self.local_bounds is None:
            if self.global_bounds is None:
                return self.X
            return self.X[_inside(self.X, self.global_bounds)]
        return self.X[_inside(self.X, self.local_bounds)]

    def value(self):
        d2 = float(self.D2.min())
        if not d2 > 0:
            f_D = math.inf
        else:
            f_D = self.log_dmax - 0.5 * math.log(d2)
        err = correlation_error(self._local_rows(), self.rho_target)
        f_rho = 0.0 if err is None else math.log(max(err, EPS_CORR))
        return f_D + f_rho

    def swap(self, i, j, col):
        for A in (self.X, self.U):
            A[i, col], A[j, col] = A[j, col], A[i, col]
        for r in (i, j):
            row = ((self.U - self.U[r]) ** 2).sum(-1)
            row[r] = np.inf
            if r < self.n_fixed:
                row[: self.n_fixed] = np.inf
            self.D2[r, :] = row
            self.D2[:, r] = row


def lhs_anneal(existing, candidate, config: AnnealConfig = AnnealConfig(), global_bounds=None,
               local_bounds=None, rho_target=None, rng=None):
    """Optimize the free candidate rows by swapping values within columns.

    Parameters
    ----------
    existing : (m_e, n) array
        Fixed points, never moved.
    candidate : LhsPlan or (m_c, n) array
        Free points; swaps keep each column's set of values.
    config : AnnealConfig
    global_bounds, local_bounds, rho_target
        See :func:`lhs_metrics`.

    Returns
    -------
    (m_c, n) array
        Best configuration seen (never worse than the start).
    """
    cand = candidate.points if isinstance(candidate, LhsPlan) else candidate
    cand = np.array(cand, dtype=float)
    existing = np.zeros((0, cand.shape[1])) if existing is None else np.atleast_2d(np.asarray(existing, dtype=float))
    if existing.size == 0:
        existing = np.zeros((0, cand.shape[1]))
    m_c, n = cand.shape
    n_prop = config.n_proposals(m_c, n)
    if n_prop == 0 or m_c < 2:
        return cand
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    n_fixed = existing.shape[0]
    state = _AnnealState(np.vstack([existing, cand]), n_fixed, global_bounds, local_bounds, rho_target)
    current = state.value()
    best, best_X = current, state.X[n_fixed:].copy()
    temp = config.initial_temperature
    for it in range(n_prop):
        col = int(rng.integers(n))
        i, j = rng.choice(m_c, size=2, replace=False) + n_fixed
        state.swap(i, j, col)
        new = state.value()
        delta = new - current
        if delta <= 0 or rng.random() < math.exp(-delta / max(temp, 1e-300)):
            current = new
            if current < best:
                best, best_X = current, state.X[n_fixed:].copy()
        else:
            state.swap(i, j, col)
        if (it + 1) % config.cooling_interval == 0:
            temp *= config.cooling_rate
    return best_X


def optimized_lhs(m, lower, upper, rng, config: AnnealConfig = AnnealConfig()):
    """Annealed Latin hypercube of ``m`` points scaled to ``[lower, upper]``.

    The stationary objective uses the global box as local bounds and the
    identity as target correlation.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    plan = lhs_generate(m, lower.size, rng)
    unit = lhs_anneal(None, plan, config, global_bounds=None, rng=rng)
    return lower + unit * (upper - lower)


def orthogonal_unit_sample(n, m, rng, config: Optional[AnnealConfig] = None):
    """Stratified unit-cube sample annealed towards zero correlation."""
    plan = lhs_generate(m, n, rng)
    if config is None:
        config = AnnealConfig(iterations=min(10 * m * n, 4000))
    if n < 2:
        return plan.points
    return lhs_anneal(None, plan, config, rng=rng)


def orthogonal_sample(rv: RandomVector, m: int, rng, config: Optional[AnnealConfig] = None, means=None):
    """Orthogonal sample of ``rv``: an annealed LHS mapped through the marginal quantiles."""
    U = orthogonal_unit_sample(rv.n, m, rng, config)
    return rv.from_unit(U, means)
