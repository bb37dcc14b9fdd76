"""Local Latin hypercube refinement.

Each step trains surrogates on the current data, optimizes the robust and
reliable design problem on them, and gathers the interest set: predicted
Pareto designs together with the points used to quantify their
uncertainty.  The interest set is clustered with DBSCAN, a box is placed
around every cluster and new points are added there as a local Latin
hypercube that respects the bins already occupied by earlier samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist, pdist, squareform

from .core import Dataset, ProblemSpec, duplicate_mask, sampling_bounds
from .moo import MooConfig, ParetoArchive, nsga2
from .reliability import ReliabilityConfig
from .rrdo import CountingFunction, InterestPoints, RrdoEvaluator, reach_alpha
from .sampling import AnnealConfig, lhs_anneal, optimized_lhs
from .surrogate import SurrogateSet, TrainSettings, fast_predictor, select_model, train_surrogates

log = logging.getLogger(__name__)

INTEREST_CAP = 2000
BIN_CAP = 10_000


# interest set -------------------------------------------------------------------
@dataclass
class InterestSet:
    points: np.ndarray
    n_candidates: int
    n_clipped: int


def farthest_point_subset(X, k, scale=None, start=0):
    """Indices of ``k`` rows chosen greedily to maximize the minimum distance."""
    X = np.asarray(X, dtype=float)
    if k >= X.shape[0]:
        return np.arange(X.shape[0])
    Z = X if scale is None else (X - scale[0]) / np.where(scale[1] > scale[0], scale[1] - scale[0], 1.0)
    chosen = np.empty(k, dtype=int)
    chosen[0] = start
    d = np.sqrt(((Z - Z[start]) ** 2).sum(axis=1))
    for i in range(1, k):
        j = int(np.argmax(d))
        chosen[i] = j
        d = np.minimum(d, np.sqrt(((Z - Z[j]) ** 2).sum(axis=1)))
    return chosen


def collect_interest_set(archive: ParetoArchive, interest: InterestPoints, global_bounds,
                         cap=INTEREST_CAP) -> InterestSet:
    """Pareto design means, their uncertainty samples and reliability points.

    Rows are deduplicated, clipped to the global sampling box and thinned by
    farthest point sampling when more than ``cap`` remain.
    """
    if archive is None or len(archive) == 0:
        raise ValueError("no candidates: the Pareto archive is empty")
    lo, hi = (np.asarray(b, dtype=float) for b in global_bounds)
    parts = [interest.designs, interest.moment_points, interest.boundary_points, interest.failure_points]
    X = np.vstack([np.atleast_2d(p).reshape(-1, lo.size) for p in parts if np.size(p)])
    n_cand = X.shape[0]
    outside = np.any((X < lo) | (X > hi), axis=1)
    X = np.clip(X, lo, hi)
    _, first = np.unique(X, axis=0, return_index=True)
    X = X[np.sort(first)]
    if X.shape[0] > cap:
        X = X[farthest_point_subset(X, cap, (lo, hi))]
    return InterestSet(X, n_cand, int(outside.sum()))


# clustering ----------------------------------------------------------------------
@dataclass
class ClusterResult:
    """DBSCAN labels (``-1`` noise) with per-cluster budgets."""

    labels: np.ndarray
    n_clusters: int
    d_min: float
    budgets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    percentile: Optional[int] = None
    fallback: bool = False

    def summary(self):
        sizes = [int(np.sum(self.labels == c)) for c in range(self.n_clusters)]
        return {"n_clusters": self.n_clusters, "d_min": float(self.d_min), "percentile": self.percentile,
                "fallback": self.fallback, "sizes": sizes, "budgets": [int(b) for b in self.budgets],
                "noise": int(np.sum(self.labels < 0))}


def _dbscan_from_distances(D, d_min, n_k):
    within = D <= d_min
    core = within.sum(axis=1) >= n_k
    labels = np.full(D.shape[0], -1)
    if not core.any():
        return labels, 0
    ci = np.flatnonzero(core)
    graph = csr_matrix(within[np.ix_(ci, ci)])
    n_comp, comp = connected_components(graph, directed=False)
    # renumber components by first occurrence
    order = {}
    for c in comp:
        if c not in order:
            order[c] = len(order)
    labels[ci] = [order[c] for c in comp]
    border = np.flatnonzero(~core & within[:, core].any(axis=1))
    if border.size:
        dc = D[np.ix_(border, ci)]
        dc = np.where(dc <= d_min, dc, np.inf)
        labels[border] = labels[ci[np.argmin(dc, axis=1)]]
    return labels, n_comp


def dbscan(points, d_min, n_k) -> ClusterResult:
    """Density based clustering.

    A core point has at least ``n_k`` points (itself included) within
    ``d_min``.  Clusters are connected components of core points; a border
    point joins the cluster of its nearest core point; everything else is
    noise.  Labels are numbered by first appearance.
    """
    if not d_min > 0 or n_k < 1:
        raise ValueError("need d_min > 0 and n_k >= 1")
    X = np.atleast_2d(np.asarray(points, dtype=float))
    D = squareform(pdist(X)) if X.shape[0] > 1 else np.zeros((1, 1))
    labels, k = _dbscan_from_distances(D, d_min, n_k)
    return ClusterResult(labels, k, float(d_min))


def allocate_budget(sizes, total):
    """One point per round to every cluster, largest cluster first."""
    sizes = np.asarray(sizes)
    order = np.argsort(-sizes, kind="stable")
    budgets = np.zeros(sizes.size, dtype=int)
    i = 0
    for _ in range(int(total)):
        budgets[order[i % sizes.size]] += 1
        i += 1
    return budgets


def auto_cluster(X_F, m_s_total, n_dims, scale=None, min_assigned=0.9, min_share=0.1) -> ClusterResult:
    """DBSCAN with its radius picked from the pairwise distance percentiles.

    ``n_k = n_dims + 1``.  Percentiles 1..99 are tried in ascending order and
    the first clustering that assigns at least 90 % of the points, whose
    smallest cluster holds at least 10 % of them and that has no more
    clusters than points to add, is accepted.  Otherwise all points form one
    cluster.  ``scale = (lower, upper)`` maps the points to the unit cube
    first.
    """
    X = np.atleast_2d(np.asarray(X_F, dtype=float))
    m = X.shape[0]
    if scale is not None:
        lo, hi = (np.asarray(b, dtype=float) for b in scale)
        X = (X - lo) / np.where(hi > lo, hi - lo, 1.0)
    n_k = n_dims + 1
    if m >= 2:
        dists = pdist(X)
        D = squareform(dists)
        levels = np.percentile(dists, np.arange(1, 100))
        for p, d in zip(range(1, 100), levels):
            d = float(d)
            if not d > 0:
                continue
            labels, k = _dbscan_from_distances(D, d, n_k)
            if k < 1 or k > m_s_total:
                continue
            sizes = np.bincount(labels[labels >= 0], minlength=k)
            if (labels >= 0).mean() >= min_assigned and sizes.min() >= min_share * m:
                return ClusterResult(labels, k, d, allocate_budget(sizes, m_s_total), p)
    d = float(np.max(pdist(X))) if m >= 2 else 0.0
    return ClusterResult(np.zeros(m, dtype=int), 1, d, np.array([int(m_s_total)]), None, True)


# local design --------------------------------------------------------------------
def cluster_bounds(cluster_points, global_bounds, m_next_total, m_s_cluster, cluster_mean=None):
    """Box around a cluster that can host ``m_s_cluster`` new bins.

    With ``b = (x_u - x_l) / m_next_total`` every side is at least
    ``dx = b * m_s_cluster`` wide: ``lower = min(min(points), mean - dx/2)``
    and ``upper = max(max(points), mean + dx/2)``.  A box sticking out of the
    global bounds is shifted back inside so the width is kept.
    """
    P = np.atleast_2d(np.asarray(cluster_points, dtype=float))
    if P.shape[0] == 0:
        raise ValueError("empty cluster")
    gl, gu = (np.asarray(b, dtype=float) for b in global_bounds)
    mu = P.mean(axis=0) if cluster_mean is None else np.asarray(cluster_mean, dtype=float)
    b = (gu - gl) / m_next_total
    dx = b * m_s_cluster
    lower = np.minimum(P.min(axis=0), mu - 0.5 * dx)
    upper = np.maximum(P.max(axis=0), mu + 0.5 * dx)
    low_out = lower < gl
    upper = np.where(low_out, np.maximum(upper, gl + dx), upper)
    lower = np.where(low_out, gl, lower)
    high_out = upper > gu
    lower = np.where(high_out, np.minimum(lower, gu - dx), lower)
    upper = np.where(high_out, gu, upper)
    return np.maximum(lower, gl), np.minimum(upper, gu)


def min_width(global_bounds, m_next_total, m_s_cluster):
    gl, gu = (np.asarray(b, dtype=float) for b in global_bounds)
    return (gu - gl) / m_next_total * m_s_cluster


def empty_bins(existing, local_bounds, k):
    """Per dimension, the bins of a ``k``-bin grid not hit by ``existing`` rows inside the box."""
    lo, hi = (np.asarray(b, dtype=float) for b in local_bounds)
    E = np.atleast_2d(np.asarray(existing, dtype=float)) if np.size(existing) else np.zeros((0, lo.size))
    inside = np.all((E >= lo) & (E <= hi), axis=1)
    E = E[inside]
    width = np.where(hi > lo, hi - lo, 1.0)
    out = []
    for j in range(lo.size):
        occ = np.zeros(k, dtype=bool)
        if E.shape[0]:
            idx = np.minimum(((E[:, j] - lo[j]) / width[j] * k).astype(int), k - 1)
            occ[idx] = True
        out.append(np.flatnonzero(~occ))
    return out


def local_refill(existing_global, local_bounds, m_s_cluster, anneal: AnnealConfig = AnnealConfig(),
                 global_bounds=None, rho_target=None, rng=None):
    """New points for one cluster.

    The bin count starts at ``m_s_cluster`` and grows until some dimension
    has ``m_s_cluster`` bins without existing points.  Every new point takes
    an empty bin in each dimension that has enough of them (other
    dimensions fill up with random bins), and the assignment is annealed
    with the space-filling and correlation objective against the existing
    points inside the box.
    """
    if m_s_cluster < 1:
        raise ValueError("m_s_cluster must be >= 1")
    rng = np.random.default_rng(rng)
    lo, hi = (np.asarray(b, dtype=float) for b in local_bounds)
    n = lo.size
    existing = np.atleast_2d(np.asarray(existing_global, dtype=float)) if np.size(existing_global) else np.zeros((0, n))
    m = int(m_s_cluster)
    k = m
    while k <= BIN_CAP:
        free = empty_bins(existing, (lo, hi), k)
        if max(len(f) for f in free) >= m:
            break
        k += 1
    else:
        log.warning("no empty local bins below %d, using maximin random placement", BIN_CAP)
        return _maximin_random(existing, lo, hi, m, rng)
    cols = []
    for j in range(n):
        f = free[j]
        if len(f) >= m:
            bins = rng.choice(f, size=m, replace=False)
        else:
            others = np.setdiff1d(np.arange(k), f)
            bins = np.concatenate([f, rng.choice(others, size=m - len(f), replace=False)])
        bins = rng.permutation(bins)
        cols.append(lo[j] + (hi[j] - lo[j]) * (bins + rng.random(m)) / k)
    cand = np.column_stack(cols)
    inside = np.all((existing >= lo) & (existing <= hi), axis=1)
    fixed = existing[inside]
    if m >= 2:
        cand = lhs_anneal(fixed, cand, anneal, global_bounds=global_bounds, local_bounds=(lo, hi),
                          rho_target=rho_target, rng=rng)
    dup = duplicate_mask(cand, existing)
    if dup.any():
        cand[dup] = _maximin_random(np.vstack([existing, cand[~dup]]), lo, hi, int(dup.sum()), rng)
    return cand


def _maximin_random(existing, lo, hi, m, rng, n_candidates=2000):
    C = lo + rng.random((n_candidates, lo.size)) * (hi - lo)
    width = np.where(hi > lo, hi - lo, 1.0)
    pool = (existing - lo) / width if existing.shape[0] else np.zeros((0, lo.size))
    Cz = (C - lo) / width
    d = cdist(Cz, pool).min(axis=1) if pool.shape[0] else np.full(n_candidates, np.inf)
    out = []
    for _ in range(m):
        j = int(np.argmax(d))
        out.append(C[j])
        d = np.minimum(d, np.sqrt(((Cz - Cz[j]) ** 2).sum(axis=1)))
    return np.array(out)


def cluster_correlation(points):
    """Pearson correlation of a cluster (identity where undefined)."""
    P = np.atleast_2d(points)
    n = P.shape[1]
    if P.shape[0] < 3:
        return np.eye(n)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.corrcoef(P, rowvar=False)
    rho = np.atleast_2d(np.nan_to_num(rho, nan=0.0))
    np.fill_diagonal(rho, 1.0)
    return rho


# driver --------------------------------------------------------------------------
@dataclass
class LolhrSettings:
    """Everything a refinement run needs besides the problem."""

    m0: int
    m_s: int
    n_steps: int
    surrogate: str = "gp"
    moo: MooConfig = MooConfig()
    reliability: ReliabilityConfig = ReliabilityConfig()
    moment_samples: int = 200
    training: TrainSettings = TrainSettings()
    anneal: AnnealConfig = AnnealConfig()
    interest_cap: int = INTEREST_CAP
    tabulate: bool = True
    sampler: str = "lolhr"

    def to_dict(self):
        return {"m0": self.m0, "m_s": self.m_s, "n_steps": self.n_steps, "surrogate": self.surrogate,
                "moo": self.moo.to_dict(), "reliability": self.reliability.to_dict(),
                "moment_samples": self.moment_samples, "interest_cap": self.interest_cap,
                "training": {"gp_restarts": self.training.gp_restarts, "cv_restarts": self.training.cv_restarts,
                             "svr_levels": self.training.svr_levels, "svr_grid": self.training.svr_grid},
                "tabulate": self.tabulate, "sampler": self.sampler}


@dataclass
class RefinementState:
    dataset: Dataset
    step: int
    budget_remaining: int
    archives: list = field(default_factory=list)

    def __post_init__(self):
        if self.budget_remaining < 0:
            raise ValueError("negative budget")


@dataclass
class RefinementResult:
    dataset: Dataset
    archive: ParetoArchive
    steps: list
    families: list
    n_true_evaluations: int
    surrogates: Optional[SurrogateSet] = None


class SurrogateFailure(RuntimeError):
    def __init__(self, step, partial, cause):
        super().__init__(f"surrogate training failed at step {step}: {cause}")
        self.step = step
        self.partial = partial


def needed_responses(problem: ProblemSpec):
    resp = set(problem.moment_responses)
    if problem.needs_reliability:
        resp |= set(problem.limit_states)
    return sorted(resp)


def _step_rngs(ss, k):
    child = np.random.SeedSequence(ss.entropy, spawn_key=(1, k))
    return [np.random.default_rng(s) for s in child.spawn(5)]


def optimize_on_surrogates(problem, surrogates, settings: LolhrSettings, bounds, rngs):
    """NSGA-II on the surrogate-backed evaluator of one step."""
    alpha = reach_alpha(settings.reliability, problem.target_pf, problem.n_inputs)
    tab_lo, tab_hi = sampling_bounds(problem, alpha)
    tab_lo, tab_hi = np.minimum(tab_lo, bounds[0]), np.maximum(tab_hi, bounds[1])
    predictor = fast_predictor(surrogates, tab_lo, tab_hi, settings.tabulate)
    ev = RrdoEvaluator(problem, predictor, settings.reliability, rngs[1], settings.moment_samples)
    archive = nsga2(ev, problem.design_lower, problem.design_upper, settings.moo, problem.target_pf, rngs[2])
    return archive, ev


def lolhr_run(problem: ProblemSpec, evaluator, settings: LolhrSettings, seed, step_hook=None) -> RefinementResult:
    """Sequential refinement until the sample budget is spent.

    ``evaluator`` maps physical inputs to all responses.  With ``n_steps=0``
    this is stationary sampling: one annealed LHS of ``m0`` points.
    """
    true_fn = evaluator if isinstance(evaluator, CountingFunction) else CountingFunction(evaluator)
    ss = np.random.SeedSequence(seed)
    init_rng = np.random.default_rng(np.random.SeedSequence(ss.entropy, spawn_key=(0,)))
    bounds = sampling_bounds(problem)
    X0 = optimized_lhs(settings.m0, bounds[0], bounds[1], init_rng, settings.anneal)
    Y0 = np.asarray(true_fn(X0), dtype=float).reshape(settings.m0, -1)
    _check_finite(Y0, 0)
    state = RefinementState(Dataset(X0, Y0, 0), 0, settings.n_steps * settings.m_s)
    responses = needed_responses(problem)
    families = [settings.surrogate if j in responses else None for j in range(problem.n_responses)]
    steps = []
    surrogates = None
    archive = None
    choice = None
    for k in range(settings.n_steps + 1):
        rngs = _step_rngs(ss, k)
        if k == 0 and settings.surrogate == "auto":
            choice = select_model(state.dataset.X, state.dataset.Y, rng=rngs[0], settings=settings.training,
                                  responses=responses)
            families = choice.families
        try:
            surrogates = train_surrogates(state.dataset.X, state.dataset.Y, families, responses, rngs[0],
                                          settings.training, warm=surrogates)
        except Exception as exc:
            partial = RefinementResult(state.dataset, archive, steps, families, true_fn.count, surrogates)
            raise SurrogateFailure(k, partial, exc) from exc
        archive, ev = optimize_on_surrogates(problem, surrogates, settings, bounds, rngs)
        info = {"step": k, "dataset_size": len(state.dataset), "front_size": len(archive),
                "n_feasible_predicted": int(np.sum(archive.feasible)),
                "model_scores": surrogates.summary()}
        if choice is not None and k == 0:
            info["model_selection"] = choice.to_dict()
        state.archives.append(archive)
        if k == settings.n_steps:
            steps.append(info)
            break
        X_new, extra = propose_points(problem, state, archive, ev, settings, bounds, rngs[3])
        info.update(extra)
        Y_new = np.asarray(true_fn(X_new), dtype=float).reshape(X_new.shape[0], -1)
        _check_finite(Y_new, k + 1)
        state = RefinementState(state.dataset.append(X_new, Y_new, k + 1), k + 1,
                                state.budget_remaining - X_new.shape[0], state.archives)
        steps.append(info)
        if step_hook is not None:
            step_hook(state, info)
    return RefinementResult(state.dataset, archive, steps, families, true_fn.count, surrogates)


def _check_finite(Y, step):
    bad = ~np.all(np.isfinite(Y), axis=1)
    if bad.any():
        raise ValueError(f"non-finite responses at step {step}, rows {np.flatnonzero(bad).tolist()}")


def propose_points(problem, state: RefinementState, archive, ev, settings: LolhrSettings, bounds, rng):
    """New sample points of one step (LoLHR or the elbow-point baseline)."""
    if settings.sampler == "gu2013":
        return elbow_points(problem, state, archive, ev, settings.m_s, bounds, rng)
    interest = ev.interest(archive.designs)
    iset = collect_interest_set(archive, interest, bounds, settings.interest_cap)
    n = problem.n_inputs
    clusters = auto_cluster(iset.points, settings.m_s, n, scale=bounds)
    m_next = len(state.dataset) + settings.m_s
    new = np.zeros((0, n))
    boxes = []
    for c in range(clusters.n_clusters):
        b = int(clusters.budgets[c])
        pts = iset.points[clusters.labels == c]
        lo, hi = cluster_bounds(pts, bounds, m_next, b, pts.mean(axis=0))
        boxes.append({"lower": lo.tolist(), "upper": hi.tolist(), "budget": b, "size": int(pts.shape[0])})
        rho = cluster_correlation(pts)
        Xc = local_refill(np.vstack([state.dataset.X, new]), (lo, hi), b, settings.anneal, bounds, rho, rng)
        new = np.vstack([new, Xc])
    extra = {"interest_size": int(iset.points.shape[0]), "interest_clipped": iset.n_clipped,
             "clusters": clusters.summary(), "boxes": boxes}
    return new, extra


def elbow_index(F):
    """Front member closest to the origin after scaling every objective to [0, 1]."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    lo, hi = F.min(axis=0), F.max(axis=0)
    Z = (F - lo) / np.where(hi > lo, hi - lo, 1.0)
    return int(np.argmin((Z ** 2).sum(axis=1)))


def elbow_points(problem, state, archive, ev, m_s, bounds, rng):
    """Elbow design plus randomly chosen other Pareto designs (input means)."""
    means = problem.input_means(archive.designs)
    means = np.clip(means, bounds[0], bounds[1])
    e = elbow_index(archive.objective_values)
    others = np.setdiff1d(np.arange(len(archive)), [e])
    order = np.concatenate([[e], rng.permutation(others)]).astype(int)
    chosen = []
    pool = state.dataset.X
    for i in order:
        x = means[i]
        if not duplicate_mask(x[None, :], np.vstack([pool] + chosen) if chosen else pool)[0]:
            chosen.append(x[None, :])
        if len(chosen) == m_s:
            break
    short = m_s - len(chosen)
    if short:
        # too few distinct Pareto designs: sample around them
        interest = ev.interest(archive.designs)
        cand = np.clip(interest.moment_points, bounds[0], bounds[1])
        cand = cand[~duplicate_mask(cand, np.vstack([pool] + chosen) if chosen else pool)]
        pick = rng.choice(cand.shape[0], size=min(short, cand.shape[0]), replace=False)
        chosen.append(cand[pick])
        if short > pick.size:
            chosen.append(_maximin_random(np.vstack([pool] + chosen), bounds[0], bounds[1], short - pick.size, rng))
    X = np.vstack(chosen)
    return X, {"elbow": int(e), "n_random_pareto": int(min(len(order) - 1, m_s - 1))}
