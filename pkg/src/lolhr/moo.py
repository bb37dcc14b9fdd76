"""NSGA-II with penalized probabilistic constraints, dominance tools and hypervolume.

All objectives are minimized.  Constraint handling follows the penalty
approach: every objective is scaled by the magnitude of its mean over the
initial population and a design whose failure probability exceeds the
target is pushed away by ``100 * (pf - target) / target``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .sampling import lhs_generate


@dataclass
class Evaluation:
    """Optimizer-facing result of evaluating a batch of designs.

    ``pf`` is the failure probability used in the penalty (``None`` when the
    problem has no probabilistic constraint) and ``penalty`` an additional
    non-negative penalty from deterministic constraints.
    """

    objectives: np.ndarray
    pf: Optional[np.ndarray] = None
    penalty: Optional[np.ndarray] = None


@dataclass(frozen=True)
class MooConfig:
    population: int = 100
    generations: int = 100
    crossover_rate: float = 0.9
    mutation_rate: Optional[float] = None
    eta_crossover: float = 15.0
    eta_mutation: float = 20.0
    rng_seed: Optional[int] = None

    def __post_init__(self):
        if self.population < 4 or self.population % 2:
            raise ValueError("population must be even and >= 4")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")

    def to_dict(self):
        return {"population": self.population, "generations": self.generations,
                "crossover_rate": self.crossover_rate, "mutation_rate": self.mutation_rate,
                "eta_crossover": self.eta_crossover, "eta_mutation": self.eta_mutation}


@dataclass
class ParetoArchive:
    """Non-dominated designs with their objective values and reliability."""

    designs: np.ndarray
    objective_values: np.ndarray
    pf_values: np.ndarray
    feasible: np.ndarray
    interest_points: Optional[np.ndarray] = None
    history: list = field(default_factory=list)

    def __len__(self):
        return self.designs.shape[0]

    def to_rows(self):
        return [list(map(float, d)) + list(map(float, f)) + [float(p), bool(ok)]
                for d, f, p, ok in zip(self.designs, self.objective_values, self.pf_values, self.feasible)]

    def to_csv(self, path):
        n_d, n_f = self.designs.shape[1], self.objective_values.shape[1]
        header = [f"theta_{i + 1}" for i in range(n_d)] + [f"f_{i + 1}" for i in range(n_f)] + ["pf", "feasible"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in self.to_rows():
                w.writerow([repr(v) if isinstance(v, float) else int(v) for v in row])


# dominance --------------------------------------------------------------------
def dominates(a, b, a_feas=True, b_feas=True) -> bool:
    """True if feasible ``a`` is no worse than feasible ``b`` everywhere and better somewhere."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("objective vectors differ in length")
    return bool(a_feas and b_feas and np.all(a <= b) and np.any(a < b))


def dominance_matrix(F):
    """``D[i, j]`` is True when row ``i`` dominates row ``j``."""
    F = np.asarray(F, dtype=float)
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    return le & lt


def nondominated_mask(F):
    """Rows of ``F`` not dominated by any other row."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    mask = np.ones(F.shape[0], dtype=bool)
    for start in range(0, F.shape[0], 512):
        blk = F[start:start + 512]
        le = np.all(F[:, None, :] <= blk[None, :, :], axis=2)
        lt = np.any(F[:, None, :] < blk[None, :, :], axis=2)
        mask[start:start + 512] = ~np.any(le & lt, axis=0)
    return mask


def fast_non_dominated_sort(F):
    """Front index (0 = best) of every row."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    m = F.shape[0]
    D = dominance_matrix(F)
    count = D.sum(axis=0)
    rank = np.full(m, -1)
    current = np.flatnonzero(count == 0)
    r = 0
    while current.size:
        rank[current] = r
        count = count - D[current].sum(axis=0)
        count[rank >= 0] = -1
        current = np.flatnonzero(count == 0)
        r += 1
    return rank


def crowding_distance(F):
    """Crowding distance of the rows of one front (boundary rows get inf)."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    m, k = F.shape
    dist = np.zeros(m)
    if m <= 2:
        dist[:] = np.inf
        return dist
    for j in range(k):
        order = np.argsort(F[:, j], kind="stable")
        fj = F[order, j]
        span = fj[-1] - fj[0]
        dist[order[0]] = dist[order[-1]] = np.inf
        if span > 0:
            dist[order[1:-1]] += (fj[2:] - fj[:-2]) / span
    return dist


# penalty -----------------------------------------------------------------------
def penalized_objective(f, f_bar, pf=None, target_pf=None):
    """Scaled objective plus probabilistic-constraint penalty.

    ``f / |f_bar| + 100 * max(0, pf - target) / target``; ``f_bar == 0`` is
    replaced by 1.
    """
    f = np.asarray(f, dtype=float)
    f_bar = np.asarray(f_bar, dtype=float)
    scale = np.where(np.abs(f_bar) > 0, np.abs(f_bar), 1.0)
    xi = f / scale
    if pf is not None and target_pf is not None:
        pen = 100.0 * np.maximum(0.0, np.asarray(pf, dtype=float) - target_pf) / target_pf
        xi = xi + (pen[..., None] if xi.ndim > np.ndim(pen) else pen)
    return xi


def _as_evaluation(result):
    if isinstance(result, Evaluation):
        return result
    return Evaluation(np.atleast_2d(np.asarray(result, dtype=float)).reshape(len(result), -1))


def _evaluate(evaluator, X, gen):
    try:
        ev = _as_evaluation(evaluator(X))
    except Exception as exc:
        raise RuntimeError(f"design evaluation failed in generation {gen}: {exc}") from exc
    F = np.asarray(ev.objectives, dtype=float).reshape(X.shape[0], -1)
    pf = None if ev.pf is None else np.asarray(ev.pf, dtype=float).reshape(-1)
    pen = np.zeros(X.shape[0]) if ev.penalty is None else np.asarray(ev.penalty, dtype=float).reshape(-1)
    return F, pf, pen


def _feasible(pf, pen, target_pf):
    ok = pen <= 0
    if pf is not None and target_pf is not None:
        ok &= pf <= target_pf
    return ok


# variation operators --------------------------------------------------------------
def sbx_crossover(p1, p2, lower, upper, eta, rng, rate):
    """Simulated binary crossover with bounds (one child pair per parent pair)."""
    c1, c2 = p1.copy(), p2.copy()
    n_pairs, d = p1.shape
    do = rng.random(n_pairs) < rate
    var = (rng.random((n_pairs, d)) < 0.5) & do[:, None] & (np.abs(p1 - p2) > 1e-14)
    u = rng.random((n_pairs, d))
    swap = rng.random((n_pairs, d)) < 0.5
    y1 = np.minimum(p1, p2)
    y2 = np.maximum(p1, p2)
    dy = np.where(y2 - y1 > 1e-14, y2 - y1, 1.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = []
        for bound, sign in ((y1 - lower, -1.0), (upper - y2, 1.0)):
            beta = 1.0 + 2.0 * bound / dy
            alpha = 2.0 - beta ** (-(eta + 1.0))
            betaq = np.where(u <= 1.0 / alpha, (u * alpha) ** (1.0 / (eta + 1.0)),
                             (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0)))
            out.append(betaq)
        ch1 = 0.5 * (y1 + y2 - out[0] * dy)
        ch2 = 0.5 * (y1 + y2 + out[1] * dy)
    ch1 = np.clip(ch1, lower, upper)
    ch2 = np.clip(ch2, lower, upper)
    a = np.where(swap, ch2, ch1)
    b = np.where(swap, ch1, ch2)
    c1 = np.where(var, a, c1)
    c2 = np.where(var, b, c2)
    return c1, c2


def polynomial_mutation(X, lower, upper, eta, rate, rng):
    """Bounded polynomial mutation applied per variable with probability ``rate``."""
    X = X.copy()
    span = upper - lower
    mut = rng.random(X.shape) < rate
    u = rng.random(X.shape)
    d1 = (X - lower) / span
    d2 = (upper - X) / span
    p = 1.0 / (eta + 1.0)
    lo_side = u < 0.5
    xy = np.where(lo_side, 1.0 - d1, 1.0 - d2)
    val = np.where(lo_side, 2.0 * u + (1.0 - 2.0 * u) * xy ** (eta + 1.0),
                   2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy ** (eta + 1.0))
    dq = np.where(lo_side, val ** p - 1.0, 1.0 - val ** p)
    X = np.where(mut, np.clip(X + dq * span, lower, upper), X)
    return X


def _tournament(rank, crowd, n, rng):
    a = rng.integers(rank.size, size=n)
    b = rng.integers(rank.size, size=n)
    better_a = (rank[a] < rank[b]) | ((rank[a] == rank[b]) & (crowd[a] >= crowd[b]))
    return np.where(better_a, a, b)


def _rank_and_crowd(xi):
    rank = fast_non_dominated_sort(xi)
    crowd = np.zeros(rank.size)
    for r in np.unique(rank):
        idx = np.flatnonzero(rank == r)
        crowd[idx] = crowding_distance(xi[idx])
    return rank, crowd


def _survivors(rank, crowd, n):
    # stable ordering: rank ascending, crowding descending, then index
    order = np.lexsort((np.arange(rank.size), -crowd, rank))
    return order[:n]


def nsga2(evaluator, lower, upper, config: MooConfig = MooConfig(), target_pf=None, rng=None):
    """Minimize vector objectives with NSGA-II.

    Parameters
    ----------
    evaluator : callable
        Maps a design batch ``(P, d)`` to an :class:`Evaluation` or to raw
        objectives ``(P, k)``.
    lower, upper : array
        Box of the design variables.
    target_pf : float, optional
        Target failure probability of the penalty.

    Returns
    -------
    ParetoArchive
        Non-dominated feasible members of the final population, or the best
        front flagged infeasible when no member is feasible.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = lower.size
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng
    N = config.population
    p_mut = 1.0 / d if config.mutation_rate is None else config.mutation_rate
    X = lower + lhs_generate(N, d, rng).points * (upper - lower)
    F, pf, pen = _evaluate(evaluator, X, 0)
    f_bar = F.mean(axis=0)

    def fitness(F, pf, pen):
        return penalized_objective(F, f_bar, pf, target_pf) + pen[:, None]

    xi = fitness(F, pf, pen)
    history = []
    for gen in range(1, config.generations + 1):
        rank, crowd = _rank_and_crowd(xi)
        parents = _tournament(rank, crowd, N, rng)
        P1, P2 = X[parents[0::2]], X[parents[1::2]]
        C1, C2 = sbx_crossover(P1, P2, lower, upper, config.eta_crossover, rng, config.crossover_rate)
        C = polynomial_mutation(np.vstack([C1, C2]), lower, upper, config.eta_mutation, p_mut, rng)
        Fc, pfc, penc = _evaluate(evaluator, C, gen)
        X = np.vstack([X, C])
        F = np.vstack([F, Fc])
        pf = None if pf is None else np.concatenate([pf, pfc])
        pen = np.concatenate([pen, penc])
        xi_all = np.vstack([xi, fitness(Fc, pfc, penc)])
        rank, crowd = _rank_and_crowd(xi_all)
        keep = _survivors(rank, crowd, N)
        X, F, pen, xi = X[keep], F[keep], pen[keep], xi_all[keep]
        pf = None if pf is None else pf[keep]
        history.append(int(_feasible(pf, pen, target_pf).sum()))
    feas = _feasible(pf, pen, target_pf)
    pf_out = np.full(N, np.nan) if pf is None else pf
    if feas.any():
        idx = np.flatnonzero(feas)
        idx = idx[nondominated_mask(F[idx])]
    else:
        idx = np.flatnonzero(nondominated_mask(xi))
    # drop duplicate designs, keep first occurrence
    _, first = np.unique(X[idx], axis=0, return_index=True)
    idx = idx[np.sort(first)]
    return ParetoArchive(X[idx].copy(), F[idx].copy(), pf_out[idx].copy(), feas[idx].copy(), history=history)


# hypervolume -----------------------------------------------------------------------
def hvi(front, reference):
    """Hypervolume dominated by ``front`` and bounded by ``reference``.

    Members not weakly dominating the reference are ignored.  Exact sweep in
    2-d, recursive slicing along the last objective above that.
    """
    ref = np.asarray(reference, dtype=float).ravel()
    F = np.asarray(front, dtype=float).reshape(-1, ref.size)
    if not np.all(np.isfinite(ref)):
        raise ValueError("reference point must be finite")
    F = F[np.all(np.isfinite(F), axis=1) & np.all(F <= ref, axis=1)]
    if F.shape[0] == 0:
        return 0.0
    F = F[nondominated_mask(F)]
    return float(_hv(np.unique(F, axis=0), ref))


def _hv(F, ref):
    k = ref.size
    if k == 1:
        return ref[0] - F[:, 0].min()
    if k == 2:
        order = np.lexsort((F[:, 1], F[:, 0]))
        vol, prev = 0.0, ref[1]
        for f1, f2 in F[order]:
            if f2 < prev:
                vol += (ref[0] - f1) * (prev - f2)
                prev = f2
        return vol
    order = np.argsort(F[:, -1], kind="stable")
    F = F[order]
    levels = np.append(F[:, -1], ref[-1])
    vol = 0.0
    for i in range(F.shape[0]):
        height = levels[i + 1] - levels[i]
        if height <= 0:
            continue
        sub = F[: i + 1, :-1]
        sub = sub[nondominated_mask(sub)]
        vol += height * _hv(sub, ref[:-1])
    return vol
