"""Surrogate families, cross-validated model selection and fast tabulation.

One independent model is trained per response column.  The family (GP or
SVR) of every response is chosen once from the initial data by 5-fold
cross-validated mean absolute error, ties going to the GP.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np
from scipy import ndimage

from .gp import gp_train
from .svr import cv_mae, kfold_indices, svr_train

log = logging.getLogger(__name__)

FAMILIES = ("gp", "svr")


@dataclass(frozen=True)
class TrainSettings:
    """Training effort.

    ``gp_restarts`` local likelihood searches per GP fit, ``cv_restarts`` per
    GP fit inside cross-validation.  SVR tuning uses ``svr_levels`` narrowing
    levels of ``svr_grid`` log-grid points per hyperparameter.
    """

    gp_restarts: int = 8
    gp_maxiter: int = 200
    cv_restarts: int = 2
    svr_levels: int = 3
    svr_grid: int = 5
    cv_folds: int = 5


def train_model(family, X, y, rng, settings: TrainSettings = TrainSettings(), warm=None, restarts=None):
    """Fit one response with the given family.

    ``warm`` is a previous model of the same family; a GP reuses its
    hyperparameters as the first start point.
    """
    if family == "gp":
        theta0 = warm.theta if warm is not None and getattr(warm, "family", "") == "gp" and not warm.constant else None
        n_restarts = settings.gp_restarts if restarts is None else restarts
        return gp_train(X, y, restarts=n_restarts, rng=rng, theta0=theta0, maxiter=settings.gp_maxiter)
    if family == "svr":
        return svr_train(X, y, tuning_levels=settings.svr_levels, grid_points=settings.svr_grid,
                         n_folds=settings.cv_folds, rng=rng)
    raise ValueError(f"unknown surrogate family {family!r}")


def cv_score(family, X, y, rng, settings: TrainSettings = TrainSettings(), folds=None):
    """5-fold cross-validated MAE of a family on ``(X, y)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    rng = np.random.default_rng(rng)
    if folds is None:
        folds = kfold_indices(y.size, settings.cv_folds, rng)
    seeds = rng.integers(2 ** 32, size=len(folds))
    counter = iter(seeds)

    def fit(a, b):
        return train_model(family, a, b, np.random.default_rng(next(counter)), settings,
                           restarts=settings.cv_restarts)

    return cv_mae(fit, X, y, folds)


@dataclass
class ModelChoice:
    """Chosen family per response and the CV-MAE of every candidate."""

    families: list
    scores: list

    def to_dict(self):
        return {"families": list(self.families), "cv_mae": [dict(s) for s in self.scores]}


def select_model(X, Y, candidates: Sequence[str] = FAMILIES, rng=None,
                 settings: TrainSettings = TrainSettings(), responses=None) -> ModelChoice:
    """Pick the family with the lower cross-validated MAE for every response.

    Responses not listed in ``responses`` get ``None``.  Ties go to ``gp``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] < 10:
        raise ValueError("model selection needs at least 10 points")
    for c in candidates:
        if c not in FAMILIES:
            raise ValueError(f"unknown surrogate family {c!r}")
    rng = np.random.default_rng(rng)
    responses = range(Y.shape[1]) if responses is None else responses
    families = [None] * Y.shape[1]
    scores = [{} for _ in range(Y.shape[1])]
    folds = kfold_indices(X.shape[0], settings.cv_folds, rng)
    for j in responses:
        seed = int(rng.integers(2 ** 32))
        for c in candidates:
            scores[j][c] = cv_score(c, X, Y[:, j], seed, settings, folds)
        order = sorted(candidates, key=lambda c: (scores[j][c], FAMILIES.index(c)))
        families[j] = order[0]
    return ModelChoice(families, scores)


@dataclass
class SurrogateSet:
    """Trained models of the responses a problem needs."""

    models: dict
    n_responses: int
    families: list = field(default_factory=list)

    @property
    def responses(self):
        return sorted(self.models)

    def predict(self, X, responses=None):
        """Predictions ``(N, n_responses)``; untrained responses are NaN."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full((X.shape[0], self.n_responses), np.nan)
        for j in (self.responses if responses is None else responses):
            out[:, j] = self.models[j].predict(X)
        return out

    def summary(self):
        return {str(j): self.models[j].summary() for j in self.responses}


def train_surrogates(X, Y, families, responses, rng, settings: TrainSettings = TrainSettings(),
                     warm: Optional[SurrogateSet] = None) -> SurrogateSet:
    """Train one model per listed response with its chosen family."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    rng = np.random.default_rng(rng)
    models = {}
    for j in responses:
        prev = warm.models.get(j) if warm is not None else None
        models[j] = train_model(families[j], X, Y[:, j], np.random.default_rng(rng.integers(2 ** 32)),
                                settings, warm=prev)
    return SurrogateSet(models, Y.shape[1], list(families))


@numba.njit(cache=True, inline="always")
def _weights(x, size, pad, w):
    # cubic B-spline weights; returns the first stencil index or -1 outside the tabulated box
    if not (x >= pad and x <= size - 1 - pad):
        return -1
    f = math.floor(x)
    t = x - f
    t2 = t * t
    t3 = t2 * t
    u = 1.0 - t
    w[0] = u * u * u / 6.0
    w[1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0
    w[2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0
    w[3] = t3 / 6.0
    return int(f) - 1


@numba.njit(cache=True)
def _bspline_eval(coeffs, shape, pad, coords, out):
    """Cubic B-spline at ``coords (N, n)`` (grid units, n <= 3) from flat coefficients.

    ``pad`` cells on each side only support the stencil.  Rows outside the
    interior are left untouched and flagged False.
    """
    N, n = coords.shape
    ok = np.ones(N, dtype=np.bool_)
    wa = np.empty(4)
    wb = np.empty(4)
    wc = np.empty(4)
    s1 = shape[1] if n > 1 else 1
    s2 = shape[2] if n > 2 else 1
    for i in range(N):
        a = _weights(coords[i, 0], shape[0], pad, wa)
        b = _weights(coords[i, 1], shape[1], pad, wb) if n > 1 else 0
        c = _weights(coords[i, 2], shape[2], pad, wc) if n > 2 else 0
        if a < 0 or b < 0 or c < 0:
            ok[i] = False
            continue
        acc = 0.0
        if n == 1:
            for p in range(4):
                acc += wa[p] * coeffs[a + p]
        elif n == 2:
            for p in range(4):
                row = (a + p) * s1 + b
                acc += wa[p] * (wb[0] * coeffs[row] + wb[1] * coeffs[row + 1]
                                + wb[2] * coeffs[row + 2] + wb[3] * coeffs[row + 3])
        else:
            for p in range(4):
                for q in range(4):
                    row = ((a + p) * s1 + b + q) * s2 + c
                    acc += wa[p] * wb[q] * (wc[0] * coeffs[row] + wc[1] * coeffs[row + 1]
                                            + wc[2] * coeffs[row + 2] + wc[3] * coeffs[row + 3])
        out[i] = acc
    return ok


class TabulatedPredictor:
    """Cubic spline table of a predictor over a box.

    For low-dimensional inputs the surrogate is evaluated once on a regular
    grid and queried by cubic B-spline interpolation, which is orders of
    magnitude cheaper than kernel predictions when a design optimizer asks
    for millions of points.  Queries outside the box fall back to the
    wrapped predictor.

    Parameters
    ----------
    predict : callable
        ``X (N, n) -> Y (N, r)``.
    lower, upper : array
        Box to tabulate.
    n_grid : int
        Grid points per dimension inside the box.
    responses : list of int
        Columns of ``predict`` to tabulate; the others are NaN.
    """

    PAD = 6

    def __init__(self, predict, lower, upper, n_grid, responses, n_responses):
        self.predict_direct = predict
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.n = self.lower.size
        self.responses = list(responses)
        self.n_responses = n_responses
        self.step = (self.upper - self.lower) / (n_grid - 1)
        # padded grid keeps the mirror boundary condition away from the box
        axes = [self.lower[i] + self.step[i] * np.arange(-self.PAD, n_grid + self.PAD) for i in range(self.n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = predict(pts)
        shape = mesh[0].shape
        self.shape = np.array(shape, dtype=np.int64)
        self.coeffs = [ndimage.spline_filter(vals[:, j].reshape(shape), order=3, mode="mirror").ravel()
                       for j in self.responses]

    def __call__(self, X, responses=None):
        X = np.asarray(X, dtype=float)
        lead = X.shape[:-1]
        X = X.reshape(-1, self.n)
        out = np.full((X.shape[0], self.n_responses), np.nan)
        coords = (X - self.lower) / self.step + self.PAD
        inside = np.ones(X.shape[0], dtype=bool)
        col = np.empty(X.shape[0])
        for c, j in zip(self.coeffs, self.responses):
            if responses is not None and j not in responses:
                continue
            inside = _bspline_eval(c, self.shape, float(self.PAD), coords, col)
            out[:, j] = col
        if not inside.all():
            out[~inside] = self.predict_direct(X[~inside], responses=responses)
        return out.reshape(*lead, self.n_responses)


def default_grid(n):
    """Grid points per dimension used for tabulation (``None``: do not tabulate)."""
    return {1: 2049, 2: 257, 3: 65}.get(n)


def fast_predictor(surrogates: SurrogateSet, lower, upper, tabulate=True):
    """Predictor for the optimizer: tabulated when the input dimension allows it."""
    n = np.asarray(lower).size
    grid = default_grid(n) if tabulate else None
    if grid is None:
        return surrogates.predict
    return TabulatedPredictor(surrogates.predict, lower, upper, grid, surrogates.responses,
                              surrogates.n_responses)
