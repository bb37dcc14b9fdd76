"""Robust and reliability-based evaluation of design batches.

An :class:`RrdoEvaluator` turns a response function (the true model or a
surrogate) into what the optimizer needs: robustness objectives from an
orthogonal sample of the inputs, the failure probability of the series
system and the deterministic constraint penalty.  All random numbers are
drawn once at construction, so the evaluator is a deterministic function of
the design and every design is judged against the same samples.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .core import ProblemSpec
from .moo import Evaluation
from .reliability import (ReliabilityConfig, directional_points, ds_batch, ds_rmax, mc_batch,
                          unit_directions)
from .sampling import orthogonal_unit_sample


class CountingFunction:
    """Response function wrapper that counts evaluated rows.

    ``fn`` maps ``X (N, n)`` to ``(N, r)``; if it accepts a ``responses``
    keyword only the requested columns are computed.
    """

    def __init__(self, fn):
        self.fn = fn
        try:
            self.selective = "responses" in inspect.signature(fn).parameters
        except (TypeError, ValueError):
            self.selective = False
        self.count = 0

    def __call__(self, X, responses=None):
        X = np.asarray(X, dtype=float)
        self.count += X.shape[0]
        if self.selective:
            return self.fn(X, responses=responses)
        return self.fn(X)


@dataclass
class InterestPoints:
    """Points gathered around a set of designs for refinement."""

    designs: np.ndarray
    moment_points: np.ndarray
    boundary_points: np.ndarray
    failure_points: np.ndarray


class RrdoEvaluator:
    """Objectives, failure probability and penalty of design batches.

    Parameters
    ----------
    problem : ProblemSpec
    response_fn : callable
        ``X (N, n_inputs) -> Y (N, n_responses)`` in physical units.
    reliability : ReliabilityConfig
    rng : numpy Generator
        Source of the shared samples.
    moment_samples : int
        Orthogonal sample size for means and variances.
    batch : int
        Designs evaluated together (bounds memory use).
    """

    def __init__(self, problem: ProblemSpec, response_fn, reliability: ReliabilityConfig, rng,
                 moment_samples=200, batch=64):
        self.problem = problem
        self.fn = response_fn if isinstance(response_fn, CountingFunction) else CountingFunction(response_fn)
        self.reliability = reliability
        self.batch = batch
        n = problem.n_inputs
        self.moment_responses = problem.moment_responses
        self.U = orthogonal_unit_sample(n, moment_samples, rng) if self.moment_responses else None
        self.limit_states = list(problem.limit_states)
        self.use_reliability = problem.needs_reliability and reliability.method != "none"
        self.directions = self.z = None
        self.r_max = None
        if self.use_reliability:
            if reliability.method == "ds":
                self.directions = unit_directions(reliability.directions, n, rng)
                self.r_max = ds_rmax(problem.target_pf, n)
            else:
                self.z = rng.standard_normal((reliability.mc_samples, n))
        self.cap = 10 * n if reliability.harvest_cap is None else reliability.harvest_cap

    @property
    def n_evaluations(self):
        return self.fn.count

    def _limit(self, X):
        Y = self.fn(X, responses=self.limit_states)
        return np.asarray(Y, dtype=float)[:, self.limit_states]

    def moments(self, designs):
        """Means and sample variances ``(P, n_responses)`` (NaN where unused)."""
        means = self.problem.input_means(designs)
        P, r = means.shape[0], self.problem.n_responses
        mu = np.full((P, r), np.nan)
        var = np.full((P, r), np.nan)
        if not self.moment_responses:
            return mu, var
        M = self.U.shape[0]
        X = self.problem.random_vector.from_unit(self.U[None, :, :], means[:, None, :])
        Y = np.asarray(self.fn(X.reshape(P * M, -1), responses=self.moment_responses), dtype=float)
        Y = Y.reshape(P, M, -1)
        cols = self.moment_responses
        mu[:, cols] = Y[:, :, cols].mean(axis=1)
        var[:, cols] = Y[:, :, cols].var(axis=1, ddof=1)
        return mu, var

    def pf(self, designs, harvest=False):
        """Failure probability per design (and harvested points when asked)."""
        means = self.problem.input_means(designs)
        P = means.shape[0]
        rv = self.problem.random_vector
        if not self.use_reliability:
            return np.full(P, np.nan), None
        if self.reliability.method == "ds":
            res = ds_batch(self._limit, rv, means, self.directions, self.reliability.brackets,
                           self.r_max, keep_roots=harvest)
            pf = np.nan_to_num(res.pf, nan=0.0)
            if not harvest:
                return pf, None
            pts = [directional_points(rv, means[p], self.directions, res.roots[p], self.cap) for p in range(P)]
            return pf, ([b for b, _ in pts], [f for _, f in pts])
        pf, kept = mc_batch(self._limit, rv, means, self.z, keep=self.cap if harvest else 0)
        if not harvest:
            return pf, None
        return pf, ([np.zeros((0, rv.n))] * P, kept)

    def objectives(self, designs, mu, var, pf):
        P = mu.shape[0]
        out = np.empty((P, self.problem.n_objectives))
        for k, obj in enumerate(self.problem.objectives):
            if obj.kind == "design":
                out[:, k] = np.asarray(obj.function(np.atleast_2d(designs)), dtype=float).reshape(P)
            elif obj.kind == "pf":
                out[:, k] = np.maximum(pf, self.problem.pf_floor)
            else:
                out[:, k] = obj.scalarize(mu[:, obj.response], var[:, obj.response])
        return out

    def evaluate(self, designs):
        designs = np.atleast_2d(np.asarray(designs, dtype=float))
        penalty = self.problem.constraint_penalty(designs)
        F, PF = [], []
        for start in range(0, designs.shape[0], self.batch):
            d = designs[start:start + self.batch]
            mu, var = self.moments(d)
            # designs violating a deterministic constraint get no reliability analysis
            pf = np.ones(d.shape[0])
            ok = penalty[start:start + self.batch] <= 0
            if ok.any():
                pf[ok] = self.pf(d[ok])[0]
            F.append(self.objectives(d, mu, var, pf))
            PF.append(pf)
        F = np.vstack(F)
        pf = np.concatenate(PF)
        constrained = self.use_reliability and self.problem.pf_constraint
        return Evaluation(F, pf if constrained else None, penalty)

    __call__ = evaluate

    def interest(self, designs) -> InterestPoints:
        """Moment samples and reliability boundary/failure points of ``designs``."""
        designs = np.atleast_2d(np.asarray(designs, dtype=float))
        means = self.problem.input_means(designs)
        n = self.problem.n_inputs
        rv = self.problem.random_vector
        if self.U is not None:
            mom = rv.from_unit(self.U[None, :, :], means[:, None, :]).reshape(-1, n)
        else:
            mom = np.zeros((0, n))
        bnd, fail = [np.zeros((0, n))], [np.zeros((0, n))]
        for start in range(0, designs.shape[0], self.batch):
            _, pts = self.pf(designs[start:start + self.batch], harvest=True)
            if pts is not None:
                bnd.extend(pts[0])
                fail.extend(pts[1])
        return InterestPoints(means, mom, np.vstack(bnd), np.vstack(fail))


def validation_evaluator(problem: ProblemSpec, true_fn, reliability: ReliabilityConfig, seed,
                         moment_samples=200) -> RrdoEvaluator:
    """Evaluator on the true responses used to validate predicted fronts."""
    return RrdoEvaluator(problem, true_fn, reliability, np.random.default_rng(seed), moment_samples,
                         batch=8 if reliability.method == "mc" else 64)


def reach_alpha(reliability: Optional[ReliabilityConfig], target_pf, n, floor_z=5.0):
    """Quantile level covering the standard normal radius the estimators probe."""
    z = floor_z
    if reliability is not None and reliability.method == "ds":
        z = max(z, ds_rmax(target_pf, n))
    return float(special.ndtr(z))
