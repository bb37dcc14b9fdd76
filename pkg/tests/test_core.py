import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from lolhr.core import (Dataset, Marginal, Objective, ProblemSpec, RandomVector, duplicate_mask,
                        marginal_transform, sampling_bounds)

MARGINALS = [
    Marginal.normal(1.0, 0.3),
    Marginal.uniform(0.0, 0.5 / math.sqrt(12.0)),
    Marginal.lognormal(40.0, 4.0),
    Marginal.proportional("lognormal", 2.5e8, 0.3),
]


def _spec(marginal, lower, upper):
    rv = RandomVector((marginal,))
    return ProblemSpec(rv, (Objective("mean", 0), Objective("variance", 0)), (), 0.1, [lower], [upper], 1)


def test_normal_median():
    assert marginal_transform(Marginal.normal(0.0, 1.0), 0.5) == 0.0


def test_uniform_support_from_variance():
    m = Marginal.uniform(0.0, 0.5 / math.sqrt(12.0))
    assert m.icdf(0.0) == pytest.approx(-0.25, abs=1e-15)
    assert m.icdf(1.0) == pytest.approx(0.25, abs=1e-15)


def test_lognormal_moments_against_integration():
    m = Marginal.lognormal(40.0, 4.0)
    mu_ln, s_ln = m.lognormal_params
    pdf = stats.lognorm(s_ln, scale=math.exp(mu_ln)).pdf
    mean = integrate.quad(lambda x: x * pdf(x), 0, np.inf)[0]
    var = integrate.quad(lambda x: (x - mean) ** 2 * pdf(x), 0, np.inf)[0]
    assert mean == pytest.approx(40.0, rel=1e-8)
    assert var == pytest.approx(16.0, rel=1e-8)
    x = m.sample(1_000_000, np.random.default_rng(3))
    assert x.mean() == pytest.approx(40.0, rel=0.01)
    assert x.var() == pytest.approx(16.0, rel=0.01)


@pytest.mark.parametrize("m", MARGINALS)
@given(u=st.floats(1e-6, 1 - 1e-6))
def test_cdf_icdf_round_trip(m, u):
    assert abs(m.cdf(m.icdf(u)) - u) <= 1e-10


def test_icdf_at_unbounded_ends():
    m = Marginal.normal(0.0, 1.0)
    with pytest.raises(ValueError):
        m.icdf(1.0)
    assert np.isfinite(m.icdf(1.0, clamp=True))


def test_degenerate_cdf_is_step():
    m = Marginal.constant(2.0)
    assert m.cdf(1.999) == 0.0 and m.cdf(2.0) == 1.0


@given(st.floats(1.0, 1e6))
def test_proportional_std_follows_mean(mu):
    m = Marginal.proportional("normal", 500.0, 0.01).with_mean(mu)
    assert m.std == 0.01 * mu


def test_invalid_marginals():
    with pytest.raises(ValueError):
        Marginal.normal(0.0, 0.0)
    with pytest.raises(ValueError):
        Marginal.lognormal(-1.0, 1.0)
    with pytest.raises(ValueError):
        Marginal("degenerate", 1.0, 0.5)


def test_sampling_bounds_normal():
    lo, hi = sampling_bounds(_spec(Marginal.normal(0.0, 0.2, design=True), -5.0, 5.0), 0.999)
    expected = 5.0 + 0.2 * stats.norm.ppf(0.999)
    assert lo[0] == pytest.approx(-expected, abs=1e-12)
    assert hi[0] == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(5.618, abs=1e-3)


def test_sampling_bounds_uniform():
    lo, hi = sampling_bounds(_spec(Marginal.uniform(0.0, 0.5 / math.sqrt(12.0), design=True), -4.5, 4.5), 0.999)
    assert lo[0] == pytest.approx(-4.7495, abs=1e-4)
    assert hi[0] == pytest.approx(4.7495, abs=1e-4)


def test_sampling_bounds_degenerate_uses_design_bounds():
    rv = RandomVector((Marginal("degenerate", 0.0, 0.0, True), Marginal.normal(1.0, 0.1)))
    spec = ProblemSpec(rv, (Objective("mean", 0), Objective("mean", 1)), (), 0.1, [-2.0], [3.0], 2)
    lo, hi = sampling_bounds(spec)
    assert (lo[0], hi[0]) == (-2.0, 3.0)


def test_problem_spec_invariants():
    rv = RandomVector((Marginal.normal(0.0, 1.0, design=True),))
    objs = (Objective("mean", 0), Objective("variance", 0))
    with pytest.raises(ValueError):
        ProblemSpec(rv, objs, (), 0.1, [1.0], [0.0], 1)
    with pytest.raises(ValueError):
        ProblemSpec(rv, objs, (), 1.5, [0.0], [1.0], 1)
    with pytest.raises(ValueError):
        ProblemSpec(rv, objs, (), 0.1, [0.0], [1.0], 1, pf_floor=0.2)


def test_dataset_append_keeps_rows():
    rng = np.random.default_rng(0)
    X, Y = rng.random((5, 2)), rng.random((5, 3))
    d0 = Dataset(X, Y, 0)
    d1 = d0.append(rng.random((3, 2)), rng.random((3, 3)), 1)
    assert len(d1) == 8
    assert np.array_equal(d1.X[:5], X) and np.array_equal(d1.Y[:5], Y)
    assert d1.step.tolist() == [0] * 5 + [1] * 3
    with pytest.raises(ValueError):
        d1.X[0, 0] = 1.0


def test_dataset_rejects_duplicates():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    d = Dataset(X, np.zeros(2))
    with pytest.raises(ValueError):
        d.append(X[:1] * (1 + 1e-14), np.zeros(1), 1)
    with pytest.raises(ValueError):
        Dataset(np.vstack([X, X[:1]]), np.zeros(3))


def test_duplicate_mask_within_new_rows():
    old = np.array([[0.0, 0.0]])
    new = np.array([[1.0, 1.0], [1.0, 1.0], [0.0, 0.0], [2.0, 1.0]])
    assert duplicate_mask(new, old).tolist() == [False, True, True, False]


def test_dataset_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    d = Dataset(rng.random((4, 2)), rng.random((4, 1)), 0).append(rng.random((2, 2)), rng.random((2, 1)), 1)
    path = tmp_path / "data.csv"
    d.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "x_1,x_2,y_1,step"
    back = Dataset.from_csv(path)
    assert np.array_equal(back.X, d.X) and np.array_equal(back.Y, d.Y) and np.array_equal(back.step, d.step)
