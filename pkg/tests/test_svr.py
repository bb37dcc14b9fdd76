import numpy as np
import pytest
from hypothesis import given, strategies as st

from lolhr.svr import cv_mae, kfold_indices, kkt_residual, rbf_kernel, smo_solve, svr_fit, svr_train


def test_constant_targets():
    X = np.random.default_rng(0).random((8, 2))
    model = svr_train(X, np.full(8, 3.0), rng=0)
    assert np.all(model.coef == 0)
    assert np.allclose(model.predict(np.random.default_rng(1).random((5, 2))), 3.0)


def test_linear_data_cv_error():
    rng = np.random.default_rng(1)
    X = rng.random((20, 2))
    y = 2 * X[:, 0]
    model = svr_train(X, y, rng=2)
    assert model.cv_mae <= 0.1 * y.std()


def test_box_constraint_after_training():
    rng = np.random.default_rng(3)
    X = rng.random((25, 2))
    model = svr_train(X, np.sin(4 * X[:, 0]) + X[:, 1] ** 2, rng=4)
    assert np.all(np.abs(model.coef) <= model.lam * (1 + 1e-12))
    assert model.converged and model.kkt_gap <= 1e-6


@given(seed=st.integers(0, 2 ** 32 - 1), lam=st.floats(0.1, 1000.0), eps=st.floats(0.001, 0.5),
       width=st.floats(0.05, 5.0))
def test_dual_solution_is_feasible_and_optimal(seed, lam, eps, width):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((15, 2))
    y = rng.standard_normal(15)
    K = rbf_kernel(X, X, width)
    res = smo_solve(K, y, lam, eps)
    assert np.all(np.abs(res.coef) <= lam * (1 + 1e-12))
    assert abs(res.coef.sum()) <= 1e-8 * max(1.0, lam)
    if res.converged:
        assert kkt_residual(K, y, res.coef, lam, eps) <= 1e-6


def test_dual_objective_beats_feasible_perturbations():
    rng = np.random.default_rng(7)
    X = rng.random((12, 1))
    y = np.sin(6 * X[:, 0])
    K = rbf_kernel(X, X, 0.3)
    lam, eps = 10.0, 0.05
    res = smo_solve(K, y, lam, eps)

    def dual(c):
        return 0.5 * c @ K @ c + eps * np.abs(c).sum() - y @ c

    best = dual(res.coef)
    for _ in range(200):
        i, j = rng.choice(12, 2, replace=False)
        c = res.coef.copy()
        t = rng.uniform(-0.05, 0.05)
        c[i] += t
        c[j] -= t
        if np.all(np.abs(c) <= lam):
            assert dual(c) >= best - 1e-9


def test_matches_reference_implementation():
    sklearn = pytest.importorskip("sklearn.svm")
    rng = np.random.default_rng(9)
    X = rng.random((30, 2))
    y = np.sin(3 * X[:, 0]) + X[:, 1]
    width = 0.5
    ours = smo_solve(rbf_kernel(X, X, width), y, 5.0, 0.05, tol=1e-9)
    ref = sklearn.SVR(C=5.0, epsilon=0.05, gamma=1.0 / (2 * width ** 2), tol=1e-9).fit(X, y)
    Q = rng.random((20, 2))
    pred = rbf_kernel(Q, X, width) @ ours.coef + ours.bias
    assert np.allclose(pred, ref.predict(Q), atol=1e-5)


def test_kfold_partitions():
    folds = kfold_indices(23, 5, np.random.default_rng(0))
    assert sorted(np.concatenate(folds).tolist()) == list(range(23))
    assert max(map(len, folds)) - min(map(len, folds)) <= 1


def test_cv_mae_of_exact_fit_is_zero():
    X = np.arange(10.0)[:, None]
    y = np.zeros(10)

    class Zero:
        def predict(self, Q):
            return np.zeros(len(Q))

    assert cv_mae(lambda a, b: Zero(), X, y, kfold_indices(10, 5, np.random.default_rng(0))) == 0.0


def test_fit_is_deterministic():
    rng = np.random.default_rng(10)
    X = rng.random((15, 2))
    y = X[:, 0] * X[:, 1]
    a = svr_fit(X, y, 10.0, 0.01, 1.0)
    b = svr_fit(X, y, 10.0, 0.01, 1.0)
    assert np.array_equal(a.coef, b.coef) and a.bias == b.bias
