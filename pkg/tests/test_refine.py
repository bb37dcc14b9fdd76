from collections import deque

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lolhr.bench import get_problem
from lolhr.moo import MooConfig, ParetoArchive
from lolhr.refine import (LolhrSettings, allocate_budget, auto_cluster, cluster_bounds, collect_interest_set, dbscan,
                          elbow_index, empty_bins, farthest_point_subset, local_refill, lolhr_run, min_width)
from lolhr.reliability import ReliabilityConfig
from lolhr.rrdo import InterestPoints
from lolhr.sampling import AnnealConfig
from lolhr.surrogate import TrainSettings


def reference_dbscan(X, eps, min_pts):
    # textbook version: grow clusters from core points breadth first
    m = len(X)
    D = np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))
    core = (D <= eps).sum(1) >= min_pts
    comp = np.full(m, -1)
    k = 0
    for i in range(m):
        if core[i] and comp[i] < 0:
            comp[i] = k
            queue = deque([i])
            while queue:
                p = queue.popleft()
                for q in np.flatnonzero((D[p] <= eps) & core):
                    if comp[q] < 0:
                        comp[q] = k
                        queue.append(q)
            k += 1
    labels = comp.copy()
    for i in np.flatnonzero(~core):
        near = np.flatnonzero(core & (D[i] <= eps))
        if near.size:
            labels[i] = comp[near[np.argmin(D[i, near])]]
    return labels, k


def canonical(labels):
    seen = {}
    return [-1 if l < 0 else seen.setdefault(l, len(seen)) for l in labels]


def test_dbscan_matches_reference():
    rng = np.random.default_rng(0)
    for _ in range(50):
        X = np.vstack([rng.normal(c, 0.1, (rng.integers(3, 15), 2)) for c in rng.uniform(-2, 2, (3, 2))])
        X = np.vstack([X, rng.uniform(-3, 3, (5, 2))])
        eps = rng.uniform(0.05, 0.5)
        res = dbscan(X, eps, 3)
        ref, k = reference_dbscan(X, eps, 3)
        assert res.n_clusters == k
        assert canonical(res.labels) == canonical(ref)


def test_dbscan_separates_blobs():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(0, 0.05, (20, 2)), rng.normal(3, 0.05, (20, 2))])
    res = dbscan(X, 0.5, 3)
    assert res.n_clusters == 2
    assert len(set(res.labels[:20])) == 1 and len(set(res.labels[20:])) == 1
    assert res.labels[0] != res.labels[-1]


def test_dbscan_identical_points():
    res = dbscan(np.ones((5, 2)), 0.1, 3)
    assert res.n_clusters == 1 and np.all(res.labels == 0)
    with pytest.raises(ValueError):
        dbscan(np.ones((5, 2)), 0.0, 3)


def test_auto_cluster_two_blobs_share_the_budget():
    rng = np.random.default_rng(2)
    X = np.vstack([rng.normal(0, 0.05, (30, 2)), rng.normal(3, 0.05, (30, 2))])
    res = auto_cluster(X, 8, 2)
    assert res.n_clusters == 2 and not res.fallback
    assert sorted(res.budgets.tolist()) == [4, 4]
    assert res.budgets.sum() == 8


def test_auto_cluster_falls_back_to_one_cluster():
    res = auto_cluster(np.array([[0.0, 0.0], [1.0, 1.0]]), 4, 2)
    assert res.fallback and res.n_clusters == 1 and res.budgets.tolist() == [4]
    single = auto_cluster(np.zeros((1, 2)), 3, 2)
    assert single.n_clusters == 1 and single.budgets.tolist() == [3]


def test_auto_cluster_never_more_clusters_than_points_to_add():
    rng = np.random.default_rng(3)
    X = np.vstack([rng.normal(c, 0.02, (10, 2)) for c in range(5)])
    res = auto_cluster(X, 3, 2)
    assert res.n_clusters <= 3 and res.budgets.sum() == 3


@given(sizes=st.lists(st.integers(1, 50), min_size=1, max_size=6), total=st.integers(0, 40))
def test_budget_allocation(sizes, total):
    b = allocate_budget(sizes, total)
    assert b.sum() == total
    assert b.max() - b.min() <= 1
    order = np.argsort(-np.asarray(sizes), kind="stable")
    assert np.all(np.diff(b[order]) <= 0)


@given(seed=st.integers(0, 2 ** 32 - 1), m_s=st.integers(1, 8), m_next=st.integers(10, 80))
def test_cluster_bounds_width_and_containment(seed, m_s, m_next):
    rng = np.random.default_rng(seed)
    gl, gu = np.array([-5.0, 0.0, 10.0]), np.array([5.0, 1.0, 20.0])
    P = gl + (gu - gl) * rng.random((rng.integers(1, 6), 3))
    lo, hi = cluster_bounds(P, (gl, gu), m_next, m_s)
    w = min_width((gl, gu), m_next, m_s)
    assert np.all(lo >= gl) and np.all(hi <= gu)
    assert np.all(hi - lo >= np.minimum(w, gu - gl) - 1e-12)
    assert np.all(P >= lo - 1e-12) and np.all(P <= hi + 1e-12)


def test_singleton_cluster_box_is_centred():
    lo, hi = cluster_bounds(np.array([[0.0, 0.0]]), ([-5, -5], [5, 5]), 40, 4)
    assert np.allclose(lo, -0.5) and np.allclose(hi, 0.5)


def test_empty_bins():
    E = np.array([[0.05, 0.95], [0.55, 0.15]])
    free = empty_bins(E, ([0, 0], [1, 1]), 4)
    assert free[0].tolist() == [1, 3] and free[1].tolist() == [1, 2]


def test_local_refill_fills_empty_bins():
    rng = np.random.default_rng(4)
    existing = rng.random((20, 2))
    lo, hi = np.array([0.2, 0.2]), np.array([0.6, 0.6])
    new = local_refill(existing, (lo, hi), 5, AnnealConfig(iterations=200), rng=rng)
    assert new.shape == (5, 2)
    assert np.all(new >= lo) and np.all(new <= hi)
    assert not np.any(np.all(np.isclose(new[:, None], existing[None]), axis=2))
    # at least one dimension is stratified over bins that held no existing point
    ok = False
    for k in range(5, 60):
        free = empty_bins(existing, (lo, hi), k)
        if max(map(len, free)) >= 5:
            for j in range(2):
                if len(free[j]) >= 5:
                    bins = np.minimum(((new[:, j] - lo[j]) / (hi[j] - lo[j]) * k).astype(int), k - 1)
                    ok |= set(bins) <= set(free[j].tolist()) and len(set(bins)) == 5
            break
    assert ok


def test_local_refill_in_crowded_box_gives_distinct_points():
    existing = np.random.default_rng(5).random((500, 2)) * 0.01
    new = local_refill(existing, ([0, 0], [0.01, 0.01]), 6, AnnealConfig(iterations=50), rng=1)
    assert len(np.unique(new, axis=0)) == 6


def test_farthest_point_subset_spreads_better_than_random():
    rng = np.random.default_rng(6)
    X = rng.random((2000, 2))

    def dmin(P):
        d = np.sqrt(((P[:, None] - P[None]) ** 2).sum(-1))
        return d[np.triu_indices(len(P), 1)].min()

    fps = dmin(X[farthest_point_subset(X, 50)])
    rand = np.median([dmin(X[rng.choice(2000, 50, replace=False)]) for _ in range(20)])
    assert fps > rand


def test_interest_set_is_clipped_deduplicated_and_capped():
    arc = ParetoArchive(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros(2), np.ones(2, bool))
    pts = InterestPoints(np.array([[0.0, 0.0], [0.0, 0.0]]), np.random.default_rng(0).normal(size=(300, 2)),
                         np.array([[10.0, 0.0]]), np.zeros((0, 2)))
    iset = collect_interest_set(arc, pts, ([-1, -1], [1, 1]), cap=100)
    assert iset.points.shape[0] == 100
    assert np.all(np.abs(iset.points) <= 1)
    assert len(np.unique(iset.points, axis=0)) == 100
    assert iset.n_candidates == 303 and iset.n_clipped >= 1
    with pytest.raises(ValueError):
        collect_interest_set(None, pts, ([-1, -1], [1, 1]))


def test_elbow_index():
    F = np.array([[0.0, 1.0], [0.3, 0.3], [1.0, 0.0]])
    assert elbow_index(F) == 1


SMALL = dict(moo=MooConfig(8, 3), reliability=ReliabilityConfig("ds", directions=16, brackets=8),
             moment_samples=20, training=TrainSettings(gp_restarts=1, cv_restarts=1, svr_levels=1, svr_grid=3),
             anneal=AnnealConfig(iterations=100))


@pytest.fixture(scope="module")
def small_run():
    p = get_problem("ex1")
    s = LolhrSettings(m0=10, m_s=4, n_steps=2, **SMALL)
    return p, s, lolhr_run(p.spec, p.evaluate, s, seed=3)


def test_loop_spends_exactly_the_budget(small_run):
    p, s, res = small_run
    assert len(res.dataset) == 18 and res.n_true_evaluations == 18
    assert np.bincount(res.dataset.step).tolist() == [10, 4, 4]
    assert len(res.steps) == 3 and res.steps[-1]["dataset_size"] == 18
    assert len(np.unique(res.dataset.X, axis=0)) == 18


def test_loop_is_reproducible(small_run):
    p, s, res = small_run
    again = lolhr_run(p.spec, p.evaluate, s, seed=3)
    assert np.array_equal(res.dataset.X, again.dataset.X)
    assert np.array_equal(res.archive.designs, again.archive.designs)


def test_no_refinement_steps_is_one_lhs(small_run):
    p, _, _ = small_run
    res = lolhr_run(p.spec, p.evaluate, LolhrSettings(m0=12, m_s=4, n_steps=0, **SMALL), seed=0)
    assert len(res.dataset) == 12 and len(res.steps) == 1
    assert np.all(res.dataset.step == 0)


def test_elbow_sampler_spends_the_budget(small_run):
    p, _, _ = small_run
    s = LolhrSettings(m0=10, m_s=3, n_steps=1, sampler="gu2013", **SMALL)
    res = lolhr_run(p.spec, p.evaluate, s, seed=1)
    assert len(res.dataset) == 13 and len(np.unique(res.dataset.X, axis=0)) == 13
