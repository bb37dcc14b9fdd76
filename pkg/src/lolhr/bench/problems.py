"""Benchmark problems with closed-form responses.

``ex1``
    Two normal inputs, linear and quartic objectives, a Himmelblau-type
    limit state and a target failure probability of 1e-6.
``ex2``
    A normal and a uniform input, quartic and quadratic objectives and a
    multimodal cosine limit state; target 1e-2.
``short_column``
    Six inputs (four lognormal loads/strengths, two normal cross-section
    dimensions); minimize the area and the failure probability of a short
    column under biaxial bending and axial load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..core import Marginal, Objective, ProblemSpec, RandomVector
from ..moo import MooConfig
from ..reliability import ReliabilityConfig


@dataclass(frozen=True)
class Protocol:
    """Run settings of a benchmark.

    ``reliability`` is used on the surrogates inside the loop and by the
    direct strategies, ``validation`` on the true functions when fronts are
    validated.
    """

    m0: int
    m_s: int
    n_steps: int
    reliability: ReliabilityConfig
    validation: ReliabilityConfig
    moo: MooConfig
    direct_short: MooConfig = MooConfig(10, 10)
    direct_long: MooConfig = MooConfig(100, 100)
    moment_samples: int = 200

    @property
    def budget(self):
        return self.m0 + self.m_s * self.n_steps


@dataclass(frozen=True)
class BenchmarkProblem:
    id: str
    spec: ProblemSpec
    responses: Callable = field(compare=False)
    reference_point: tuple
    protocol: Protocol
    so_cost: Optional[Callable] = field(default=None, compare=False)
    response_names: tuple = ()

    def evaluate(self, X, responses=None):
        return self.responses(X, responses=responses)


# example 1 -----------------------------------------------------------------------
def ex1_responses(X, responses=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x1, x2 = X[:, 0], X[:, 1]
    out = np.empty((X.shape[0], 3))
    want = range(3) if responses is None else responses
    if 0 in want:
        out[:, 0] = (5.0 * math.sqrt(2.0) - x1 - x2) / 7.0
    if 1 in want:
        out[:, 1] = (X ** 4 - 16.0 * X ** 2 + 5.0 * X).sum(axis=1) / 180.0
    if 2 in want:
        out[:, 2] = ((x1 ** 2 + x2) / 1.81 - 11.0) ** 2 + ((x1 + x2 ** 2) / 1.81 - 7.0) ** 2 - 45.0
    return out


def problem_ex1() -> BenchmarkProblem:
    rv = RandomVector((Marginal.normal(0.0, 0.2, design=True), Marginal.normal(0.0, 0.2, design=True)))
    spec = ProblemSpec(
        random_vector=rv,
        objectives=(Objective("mean_plus_k_var", 0, 1.96, name="f1"),
                    Objective("mean_plus_k_var", 1, 1.96, name="f2")),
        limit_states=(2,),
        target_pf=1e-6,
        design_lower=[-5.0, -5.0],
        design_upper=[5.0, 5.0],
        n_responses=3,
        name="ex1",
    )
    protocol = Protocol(
        m0=32, m_s=8, n_steps=4,
        reliability=ReliabilityConfig("ds", directions=160, brackets=20),
        validation=ReliabilityConfig("ds", directions=160, brackets=20),
        moo=MooConfig(100, 100),
    )
    return BenchmarkProblem("ex1", spec, ex1_responses, (1.75, 1.5), protocol, response_names=("f1", "f2", "g"))


# example 2 -----------------------------------------------------------------------
def ex2_responses(X, responses=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty((X.shape[0], 3))
    want = range(3) if responses is None else responses
    if 0 in want:
        out[:, 0] = (X ** 4 - 16.0 * X ** 2 + 5.0 * X).sum(axis=1) / 180.0
    if 1 in want:
        out[:, 1] = ((X - 2.25) ** 2).sum(axis=1) / 50.0
    if 2 in want:
        s = X / 1.475
        out[:, 2] = 7.0 - (s ** 2 + 5.0 * np.cos(2.0 * np.pi * s)).sum(axis=1)
    return out


def problem_ex2() -> BenchmarkProblem:
    rv = RandomVector((Marginal.normal(0.0, 0.15, design=True),
                       Marginal.uniform(0.0, 0.5 / math.sqrt(12.0), design=True)))
    spec = ProblemSpec(
        random_vector=rv,
        objectives=(Objective("mean_plus_k_var", 0, 1.96, name="f1"),
                    Objective("mean_plus_k_var", 1, 1.96, name="f2")),
        limit_states=(2,),
        target_pf=1e-2,
        design_lower=[-4.5, -4.5],
        design_upper=[4.5, 4.5],
        n_responses=3,
        name="ex2",
    )
    protocol = Protocol(
        m0=64, m_s=16, n_steps=4,
        reliability=ReliabilityConfig("mc", mc_samples=10_000),
        validation=ReliabilityConfig("mc", mc_samples=1_000_000),
        moo=MooConfig(100, 100),
    )
    return BenchmarkProblem("ex2", spec, ex2_responses, (-0.35, 0.8), protocol, response_names=("f1", "f2", "g"))


# short column --------------------------------------------------------------------
SHORT_COLUMN_TARGET = 1.35e-3
SHORT_COLUMN_FLOOR = 1.35e-5


def short_column_responses(X, responses=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m1, m2, f, r, b, h = X.T
    g = 1.0 - 4.0 * m1 / (b * h ** 2 * r) - 4.0 * m2 / (b ** 2 * h * r) - (f / (b * h * r)) ** 2
    return g[:, None]


def _area(designs):
    d = np.atleast_2d(designs)
    return d[:, 0] * d[:, 1]


def _ratio_constraints(designs):
    d = np.atleast_2d(designs)
    ratio = d[:, 0] / d[:, 1]
    return np.column_stack([(ratio - 0.5) / 0.5, (2.0 - ratio) / 2.0])


def short_column_cost(designs, pf):
    """Single objective cost ``mu_B mu_H (1 + 100 pf)``."""
    return _area(designs) * (1.0 + 100.0 * np.asarray(pf, dtype=float))


def problem_short_column() -> BenchmarkProblem:
    rv = RandomVector((
        Marginal.proportional("lognormal", 2.5e8, 0.3),
        Marginal.proportional("lognormal", 1.25e8, 0.3),
        Marginal.proportional("lognormal", 2.5e6, 0.2),
        Marginal.proportional("lognormal", 40.0, 0.1),
        Marginal.proportional("normal", 500.0, 0.01, design=True),
        Marginal.proportional("normal", 500.0, 0.01, design=True),
    ))
    spec = ProblemSpec(
        random_vector=rv,
        objectives=(Objective("design", function=_area, name="area"), Objective("pf", name="pf")),
        limit_states=(0,),
        target_pf=SHORT_COLUMN_TARGET,
        design_lower=[100.0, 100.0],
        design_upper=[1000.0, 1000.0],
        n_responses=1,
        pf_floor=SHORT_COLUMN_FLOOR,
        pf_constraint=True,
        design_constraints=_ratio_constraints,
        name="short_column",
    )
    protocol = Protocol(
        m0=64, m_s=16, n_steps=4,
        reliability=ReliabilityConfig("ds", directions=160, brackets=20),
        validation=ReliabilityConfig("ds", directions=160, brackets=20),
        moo=MooConfig(50, 50),
    )
    return BenchmarkProblem("short_column", spec, short_column_responses, (4.0e5, SHORT_COLUMN_TARGET), protocol,
                            so_cost=short_column_cost, response_names=("g",))


PROBLEMS = {"ex1": problem_ex1, "ex2": problem_ex2, "short_column": problem_short_column}


def get_problem(problem_id) -> BenchmarkProblem:
    try:
        return PROBLEMS[problem_id]()
    except KeyError:
        raise ValueError(f"unknown problem {problem_id!r}; choose from {sorted(PROBLEMS)}") from None
