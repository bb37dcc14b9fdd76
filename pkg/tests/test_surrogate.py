import numpy as np
import pytest

from lolhr.surrogate import (TabulatedPredictor, TrainSettings, cv_score, fast_predictor, select_model,
                             train_surrogates)

FAST = TrainSettings(gp_restarts=2, cv_restarts=1, svr_levels=2, svr_grid=3)


def test_select_model_reports_both_scores():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (20, 2))
    Y = np.column_stack([X[:, 0] ** 2 + X[:, 1] ** 2])
    choice = select_model(X, Y, rng=1, settings=FAST)
    assert choice.families[0] in ("gp", "svr")
    assert set(choice.scores[0]) == {"gp", "svr"}


def test_chosen_family_has_lower_cv_error():
    X = np.linspace(0, 2 * np.pi, 32)[:, None]
    choice = select_model(X, np.sin(X), rng=3, settings=FAST)
    s = choice.scores[0]
    assert s[choice.families[0]] <= min(s.values())


def test_tie_goes_to_gp(monkeypatch):
    import lolhr.surrogate as sur
    monkeypatch.setattr(sur, "cv_score", lambda *a, **k: 0.5)
    X = np.random.default_rng(0).random((12, 2))
    choice = sur.select_model(X, X[:, :1], rng=0, settings=FAST)
    assert choice.families == ["gp"]


def test_select_model_needs_ten_points():
    with pytest.raises(ValueError):
        select_model(np.zeros((5, 1)), np.zeros((5, 1)))


def test_cv_score_is_seeded():
    rng = np.random.default_rng(4)
    X = rng.random((15, 2))
    y = np.exp(X[:, 0])
    assert cv_score("svr", X, y, 7, FAST) == cv_score("svr", X, y, 7, FAST)


def test_surrogate_set_skips_unneeded_responses():
    rng = np.random.default_rng(5)
    X = rng.random((12, 2))
    Y = np.column_stack([X.sum(1), X[:, 0] * 3, np.ones(12)])
    s = train_surrogates(X, Y, ["gp", None, "svr"], [0, 2], rng=0, settings=FAST)
    P = s.predict(rng.random((4, 2)))
    assert np.all(np.isnan(P[:, 1])) and np.all(np.isfinite(P[:, [0, 2]]))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_tabulated_predictor_close_to_direct(n):
    def f(X, responses=None):
        return np.column_stack([np.sin(X).sum(1), np.cos(X).prod(1)])

    lo, hi = -np.ones(n), np.ones(n)
    grid = {1: 2049, 2: 257, 3: 65}[n]
    T = TabulatedPredictor(f, lo, hi, grid, [0, 1], 2)
    Q = np.random.default_rng(n).uniform(-1.2, 1.2, size=(2000, n))
    assert np.allclose(T(Q), f(Q), atol=1e-4)
    outside = np.any(np.abs(Q) > 1, axis=1)
    assert np.array_equal(T(Q[outside]), f(Q[outside]))


def test_no_table_above_three_inputs():
    rng = np.random.default_rng(0)
    X = rng.random((12, 4))
    s = train_surrogates(X, X[:, :1], ["gp"], [0], rng=0, settings=FAST)
    assert fast_predictor(s, np.zeros(4), np.ones(4)) == s.predict
