"""Failure probability of series systems by Monte Carlo and directional sampling.

A series system fails when the smallest limit state is negative.  Both
estimators have a batched core that evaluates many design mean vectors
against one shared set of random numbers, so estimates for different
designs differ only through the designs themselves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats
from scipy.optimize.elementwise import find_root

from .core import RandomVector

log = logging.getLogger(__name__)

ROOT_XTOL = 1e-6


@dataclass
class ReliabilityResult:
    """Estimate for one design.

    ``failure_points`` and ``boundary_points`` are in physical units.
    """

    pf_estimate: float
    n_evals: int
    failure_points: np.ndarray
    boundary_points: np.ndarray
    skipped: int = 0

    def __post_init__(self):
        if not 0.0 <= self.pf_estimate <= 1.0:
            raise ValueError(f"pf estimate {self.pf_estimate} outside [0, 1]")


@dataclass(frozen=True)
class ReliabilityConfig:
    """Estimator settings.

    ``method`` is ``ds``, ``mc`` or ``none``.  ``harvest_cap`` limits the
    failure and boundary points kept per design (``None``: ``10 * n``).
    """

    method: str = "ds"
    directions: int = 160
    brackets: int = 20
    mc_samples: int = 1_000_000
    harvest_cap: int | None = None

    def __post_init__(self):
        if self.method not in ("ds", "mc", "none"):
            raise ValueError(f"unknown reliability method {self.method!r}")
        if self.directions < 1 or self.brackets < 1 or self.mc_samples < 1:
            raise ValueError("reliability settings must be positive")

    def to_dict(self):
        return {"method": self.method, "directions": self.directions, "brackets": self.brackets,
                "mc_samples": self.mc_samples, "harvest_cap": self.harvest_cap}


def series_min(values):
    """Smallest limit state per point (last axis holds the limit states)."""
    values = np.asarray(values, dtype=float)
    return values if values.ndim == 1 else values.min(axis=-1)


def _limit(limit_fn, X):
    lead = X.shape[:-1]
    g = series_min(limit_fn(X.reshape(-1, X.shape[-1])))
    return g.reshape(lead)


def ds_rmax(target_pf, n_dims):
    """Search radius of directional sampling.

    The per-direction chi-squared tail beyond ``r_max`` equals
    ``target_pf / 100``, the smallest non-zero contribution worth resolving.
    """
    if not 0.0 < target_pf < 1.0:
        raise ValueError("target_pf must lie in (0, 1)")
    return float(np.sqrt(stats.chi2.isf(target_pf / 100.0, n_dims)))


def ds_min_increment(target_pf, m_directions):
    """Smallest non-zero probability a single direction can add."""
    return target_pf / (100.0 * m_directions)


def unit_directions(m, n, rng, stratified=True):
    """Unit vectors whose individual distribution is uniform on the sphere.

    With ``stratified`` the set is spread evenly: in 2-d the angles are
    equally spaced with one random offset, in higher dimensions the vectors
    come in antithetic pairs built from a Latin hypercube of Gaussian
    draws.  Otherwise they are independent normalized Gaussian draws.
    """
    if n == 1:
        return np.where(np.arange(m) % 2 == 0, 1.0, -1.0)[:, None]
    if not stratified:
        A = rng.standard_normal((m, n))
    elif n == 2:
        phi = 2.0 * np.pi * (np.arange(m) + rng.random()) / m
        A = np.column_stack([np.cos(phi), np.sin(phi)])
    else:
        half = (m + 1) // 2
        u = (np.argsort(rng.random((half, n)), axis=0) + rng.random((half, n))) / half
        Z = special.ndtri(np.clip(u, 1e-12, 1 - 1e-12))
        A = np.vstack([Z, -Z])[:m]
    return A / np.linalg.norm(A, axis=1, keepdims=True)


def _tail(r, n):
    return stats.chi2.sf(np.asarray(r, dtype=float) ** 2, n)


@dataclass
class DirectionalBatch:
    """Batched directional sampling result for ``P`` designs."""

    pf: np.ndarray
    n_evals: int
    roots: list = field(default_factory=list)
    skipped: np.ndarray | None = None


def ds_batch(limit_fn, rv: RandomVector, means, directions, n_bracket, r_max, keep_roots=False):
    """Directional sampling for a batch of design mean vectors.

    Parameters
    ----------
    limit_fn : callable
        ``X (N, n) -> g (N,)`` or ``(N, J)``; failure where the minimum is negative.
    means : (P, n) array
        Input mean vector of every design.
    directions : (D, n) array
        Unit directions in standard normal space, shared by all designs.
    n_bracket : int
        Equally spaced radii in ``(0, r_max]`` used to bracket roots.

    Returns
    -------
    DirectionalBatch
        ``pf`` per design.  With ``keep_roots`` the list ``roots`` holds per
        design an array of ``(direction, radius, failing_radius)`` rows for
        the first crossing of every direction that has one.

    Notes
    -----
    For a safe origin the contribution of a direction is the chi-squared
    tail beyond its first safe-to-fail crossing.  For a failing origin it is
    the mass inside the first fail-to-safe crossing plus the tail beyond a
    later safe-to-fail crossing; a direction that never leaves the failure
    domain contributes 1.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    A = np.asarray(directions, dtype=float)
    P, D, n = means.shape[0], A.shape[0], A.shape[1]
    radii = r_max * np.arange(1, n_bracket + 1) / n_bracket
    U = A[None, :, None, :] * radii[None, None, :, None]
    X = rv.from_standard_normal(U, means[:, None, None, :])
    g = _limit(limit_fn, X)
    g0 = _limit(limit_fn, rv.from_standard_normal(np.zeros((P, n)), means))
    n_evals = P * (D * n_bracket + 1)
    finite = np.all(np.isfinite(g), axis=2) & np.isfinite(g0)[:, None]
    g = np.where(finite[:, :, None], g, 1.0)
    fail = g < 0
    origin_fail = (g0 < 0)[:, None] & np.ones((1, D), dtype=bool)
    # first grid index whose failure state differs from the origin's
    flip = fail != origin_fail[:, :, None]
    has1 = flip.any(axis=2)
    k1 = np.argmax(flip, axis=2)
    r_lo1 = np.where(k1 > 0, radii[np.maximum(k1 - 1, 0)], 0.0)
    r_hi1 = radii[k1]
    # for failing origins, the next fail state after the first safe one
    k2 = np.full((P, D), -1)
    if origin_fail.any():
        after = fail & (np.arange(n_bracket)[None, None, :] > k1[:, :, None])
        has2 = after.any(axis=2) & has1 & origin_fail
        k2 = np.where(has2, np.argmax(after, axis=2), -1)
    else:
        has2 = np.zeros((P, D), dtype=bool)
    r1 = np.full((P, D), np.nan)
    r2 = np.full((P, D), np.nan)
    todo = has1 & finite
    if todo.any():
        r1[todo], e1 = _refine(limit_fn, rv, means, A, r_lo1[todo], r_hi1[todo], np.nonzero(todo))
        n_evals += e1
    if has2.any():
        sel = has2 & finite
        k = k2[sel]
        r_lo2, r_hi2 = radii[k - 1], radii[k]
        r2[sel], e2 = _refine(limit_fn, rv, means, A, r_lo2, r_hi2, np.nonzero(sel))
        n_evals += e2
    safe_origin = ~origin_fail
    contrib = np.zeros((P, D))
    m = safe_origin & todo
    contrib[m] = _tail(r1[m], n)
    m = origin_fail & finite
    inner = np.where(todo, 1.0 - _tail(np.where(todo, r1, 0.0), n), 1.0)
    outer = np.where(has2 & finite, _tail(np.where(has2, r2, 0.0), n), 0.0)
    contrib[m] = (inner + outer)[m]
    n_ok = finite.sum(axis=1)
    skipped = D - n_ok
    if skipped.any():
        log.warning("directional sampling skipped %d non-finite directions", int(skipped.sum()))
    pf = np.where(n_ok > 0, contrib.sum(axis=1) / np.maximum(n_ok, 1), np.nan)
    pf = np.clip(pf, 0.0, 1.0)
    roots = []
    if keep_roots:
        for p in range(P):
            rows = []
            for d in np.flatnonzero(todo[p]):
                # failing side of the first crossing
                r_fail = r_hi1[p, d] if safe_origin[p, d] else r_lo1[p, d]
                rows.append((d, r1[p, d], r_fail))
            roots.append(np.array(rows, dtype=float).reshape(-1, 3))
    return DirectionalBatch(pf, n_evals, roots, skipped)


def _refine(limit_fn, rv, means, A, r_lo, r_hi, index):
    """Bracketed root refinement of every (design, direction) pair at once."""
    p_idx, d_idx = index

    def f(r, p, d):
        p = p.astype(int)
        d = d.astype(int)
        U = A[d] * r[..., None]
        return _limit(limit_fn, rv.from_standard_normal(U, means[p]))

    calls = {"n": 0}

    def counted(r, p, d):
        calls["n"] += np.size(r)
        return f(r, p, d)

    res = find_root(counted, (r_lo, r_hi), args=(p_idx.astype(float), d_idx.astype(float)),
                    tolerances={"xatol": ROOT_XTOL, "xrtol": 0.0})
    x = np.where(np.isfinite(res.x), res.x, 0.5 * (r_lo + r_hi))
    return x, calls["n"]


def directional_points(rv, means_row, directions, roots, cap):
    """Boundary and failure points of one design from :func:`ds_batch` roots.

    Points nearest to the limit state come first; at most ``cap`` of each.
    """
    if roots.size == 0:
        empty = np.zeros((0, rv.n))
        return empty, empty
    d = roots[:, 0].astype(int)
    r = roots[:, 1]
    r_fail = roots[:, 2]
    order = np.argsort(np.abs(r_fail - r), kind="stable")[:cap]
    boundary = rv.from_standard_normal(directions[d[order]] * r[order, None], means_row)
    failure = rv.from_standard_normal(directions[d[order]] * r_fail[order, None], means_row)
    return boundary, failure


def ds_pf(evaluator, rv: RandomVector, m_directions, n_bracket, target_pf, rng, harvest_cap=None):
    """Directional sampling estimate of the failure probability of ``rv``.

    ``evaluator`` maps physical inputs ``(N, n)`` to limit state values
    ``(N,)`` or ``(N, J)``.
    """
    if m_directions < 1 or n_bracket < 1:
        raise ValueError("need at least one direction and one bracket point")
    n = rv.n
    A = unit_directions(m_directions, n, rng)
    r_max = ds_rmax(target_pf, n)
    batch = ds_batch(evaluator, rv, rv.means[None, :], A, n_bracket, r_max, keep_roots=True)
    cap = 10 * n if harvest_cap is None else harvest_cap
    boundary, failure = directional_points(rv, rv.means, A, batch.roots[0], cap)
    if failure.shape[0]:
        ok = series_min(evaluator(failure)) <= 0
        failure = failure[ok]
    pf = float(batch.pf[0]) if np.isfinite(batch.pf[0]) else 0.0
    return ReliabilityResult(pf, batch.n_evals, failure, boundary, int(batch.skipped[0]))


def mc_batch(limit_fn, rv: RandomVector, means, z, chunk=2_000_000, keep=0):
    """Monte Carlo failure probability for a batch of designs.

    ``z`` holds ``N`` shared standard normal samples ``(N, n)``.  With
    ``keep > 0`` the ``keep`` failing samples nearest to the limit state of
    every design are returned as well.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    z = np.asarray(z, dtype=float)
    P, N = means.shape[0], z.shape[0]
    counts = np.zeros(P)
    kept = [np.zeros((0, rv.n)) for _ in range(P)]
    per = max(1, chunk // max(N, 1))
    for start in range(0, P, per):
        sl = slice(start, min(P, start + per))
        X = rv.from_standard_normal(z[None, :, :], means[sl, None, :])
        try:
            g = _limit(limit_fn, X)
        except Exception as exc:
            raise RuntimeError(f"limit state evaluation failed for designs {sl.start}..{sl.stop - 1}: {exc}") from exc
        if not np.all(np.isfinite(g)):
            bad = np.argwhere(~np.isfinite(g))[0]
            raise ValueError(f"non-finite limit state at design {sl.start + bad[0]}, sample {bad[1]}")
        failing = g < 0
        counts[sl] = failing.sum(axis=1)
        if keep:
            for p in range(X.shape[0]):
                idx = np.flatnonzero(failing[p])
                idx = idx[np.argsort(-g[p, idx], kind="stable")[:keep]]
                kept[sl.start + p] = X[p, idx]
    return counts / N, kept


def mc_pf(evaluator, rv: RandomVector, n_samples, rng, harvest_cap=None, chunk=200_000):
    """Crude Monte Carlo estimate ``count(min_j g_j < 0) / n``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    cap = 10 * rv.n if harvest_cap is None else harvest_cap
    fails = 0
    best_g = np.zeros(0)
    best_x = np.zeros((0, rv.n))
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        X = rv.from_standard_normal(rng.standard_normal((m, rv.n)))
        try:
            g = series_min(evaluator(X))
        except Exception as exc:
            raise RuntimeError(f"evaluator failed on samples {done}..{done + m - 1}: {exc}") from exc
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite limit state at sample {done + int(np.argmax(~np.isfinite(g)))}")
        f = g < 0
        fails += int(f.sum())
        if cap:
            best_g = np.concatenate([best_g, g[f]])
            best_x = np.vstack([best_x, X[f]])
            order = np.argsort(-best_g, kind="stable")[:cap]
            best_g, best_x = best_g[order], best_x[order]
        done += m
    return ReliabilityResult(fails / n_samples, n_samples, best_x, np.zeros((0, rv.n)))
