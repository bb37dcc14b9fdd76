"""Strategies, front validation and run records."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import ProblemSpec
from ..moo import MooConfig, ParetoArchive, hvi, nondominated_mask, nsga2
from ..refine import LolhrSettings, lolhr_run
from ..reliability import ReliabilityConfig
from ..rrdo import CountingFunction, validation_evaluator, RrdoEvaluator
from ..sampling import lhs_generate
from ..surrogate import TrainSettings
from .problems import BenchmarkProblem

STRATEGIES = ("lolhr", "stationary", "random", "direct", "gu2013")
SURROGATES = ("gp", "svr", "auto")
RECORD_VERSION = 1


@dataclass
class Validation:
    """Front re-evaluated on the true responses."""

    designs: np.ndarray
    objectives: np.ndarray
    pf: np.ndarray
    feasible: np.ndarray
    pareto: np.ndarray
    hvi: float
    so_cost: Optional[float] = None
    n_evaluations: int = 0

    @property
    def m_F(self):
        return int(np.sum(~self.feasible))

    @property
    def n_feasible(self):
        return int(np.sum(self.feasible))

    @property
    def n_pareto(self):
        return int(np.sum(self.pareto))


def validation_seed(seed):
    """Seed of the validation samples; shared by all strategies of a seed."""
    return np.random.SeedSequence(seed, spawn_key=(99,))


def validate_front(problem: BenchmarkProblem, designs, reliability: Optional[ReliabilityConfig] = None,
                   seed=0, moment_samples=None) -> Validation:
    """True objectives and failure probabilities of predicted Pareto designs.

    Designs with a failure probability above the target or violating a
    deterministic constraint are unreliable.  The remaining ones are
    filtered for dominance again and their hypervolume is computed.
    """
    spec = problem.spec
    designs = np.atleast_2d(np.asarray(designs, dtype=float)).reshape(-1, spec.n_design)
    rel = problem.protocol.validation if reliability is None else reliability
    ms = problem.protocol.moment_samples if moment_samples is None else moment_samples
    if designs.shape[0] == 0:
        empty = np.zeros((0, spec.n_objectives))
        return Validation(designs, empty, np.zeros(0), np.zeros(0, bool), np.zeros(0, bool), 0.0)
    ev = validation_evaluator(spec, problem.evaluate, rel, validation_seed(seed), ms)
    res = ev(designs)
    pf = ev.pf(designs)[0] if res.pf is None else res.pf
    feasible = np.asarray(res.penalty <= 0)
    if ev.use_reliability and spec.pf_constraint:
        feasible &= pf <= spec.target_pf
    pareto = np.zeros(designs.shape[0], dtype=bool)
    idx = np.flatnonzero(feasible)
    if idx.size:
        pareto[idx[nondominated_mask(res.objectives[idx])]] = True
    h = hvi(res.objectives[pareto], problem.reference_point) if pareto.any() else 0.0
    cost = None
    if problem.so_cost is not None and feasible.any():
        cost = float(np.min(problem.so_cost(designs[feasible], pf[feasible])))
    return Validation(designs, res.objectives, pf, feasible, pareto, h, cost, ev.n_evaluations)


def settings_for(problem: BenchmarkProblem, strategy, surrogate, overrides=None) -> LolhrSettings:
    p = problem.protocol
    s = LolhrSettings(m0=p.m0, m_s=p.m_s, n_steps=p.n_steps, surrogate=surrogate, moo=p.moo,
                      reliability=p.reliability, moment_samples=p.moment_samples)
    if strategy == "stationary":
        s = dataclasses.replace(s, m0=p.budget, n_steps=0)
    elif strategy == "gu2013":
        s = dataclasses.replace(s, sampler="gu2013")
    if overrides:
        s = dataclasses.replace(s, **overrides)
    return s


def run_strategy(problem: BenchmarkProblem, strategy, surrogate="gp", seed=0, settings: LolhrSettings = None,
                 direct_long=False, validation: Optional[ReliabilityConfig] = None, progress=None) -> dict:
    """Run one strategy on one seed and return its record (a JSON-ready dict)."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if surrogate not in SURROGATES:
        raise ValueError(f"unknown surrogate {surrogate!r}")
    spec = problem.spec
    config = {"problem": problem.id, "strategy": strategy, "seed": int(seed)}
    steps = []
    if strategy in ("lolhr", "stationary", "gu2013"):
        settings = settings or settings_for(problem, strategy, surrogate)
        if settings.m0 + settings.m_s * settings.n_steps > problem.protocol.budget and strategy != "lolhr":
            raise ValueError("budget misconfiguration: more samples than the protocol allows")
        config.update({"surrogate": settings.surrogate, "settings": settings.to_dict()})
        res = lolhr_run(spec, problem.evaluate, settings, seed, step_hook=progress)
        predicted = res.archive
        n_evals = res.n_true_evaluations
        steps = res.steps
        families = res.families
        dataset = res.dataset.to_dict()
    elif strategy == "random":
        budget = problem.protocol.budget if settings is None else settings.m0 + settings.m_s * settings.n_steps
        config.update({"budget": budget})
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
        designs = spec.design_lower + lhs_generate(budget, spec.n_design, rng).points * (spec.design_upper - spec.design_lower)
        predicted = ParetoArchive(designs, np.full((budget, spec.n_objectives), np.nan), np.full(budget, np.nan),
                                  np.zeros(budget, bool))
        n_evals = None
        families = []
        dataset = None
    else:
        moo = problem.protocol.direct_long if direct_long else problem.protocol.direct_short
        config.update({"variant": "long" if direct_long else "short", "moo": moo.to_dict(),
                       "reliability": problem.protocol.validation.to_dict()})
        fn = CountingFunction(problem.evaluate)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(8,)))
        ev = RrdoEvaluator(spec, fn, problem.protocol.validation, rng, problem.protocol.moment_samples,
                           batch=8 if problem.protocol.validation.method == "mc" else 64)
        predicted = nsga2(ev, spec.design_lower, spec.design_upper, moo, spec.target_pf,
                          np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(9,))))
        n_evals = fn.count
        families = []
        dataset = None
    val = validate_front(problem, predicted.designs, validation, seed)
    if strategy == "random":
        n_evals = val.n_evaluations
    record = {
        "version": RECORD_VERSION,
        "config": config,
        "seed": int(seed),
        "steps": steps,
        "families": [f for f in families],
        "dataset_size": 0 if dataset is None else len(dataset["step"]),
        "dataset": dataset,
        "predicted_front": _front_rows(predicted.designs, predicted.objective_values, predicted.pf_values,
                                       predicted.feasible),
        "validated_front": _front_rows(val.designs, val.objectives, val.pf, val.feasible, val.pareto),
        "hvi": val.hvi,
        "counts": {"m_F": val.m_F, "p": val.n_feasible, "pareto": val.n_pareto, "m": int(n_evals),
                   "predicted": int(len(predicted))},
        "so_cost": val.so_cost,
        "reference_point": list(problem.reference_point),
    }
    return clean_json(record)


def _front_rows(designs, objectives, pf, feasible, pareto=None):
    rows = []
    for i in range(designs.shape[0]):
        row = {"design": designs[i].tolist(), "objectives": np.asarray(objectives[i]).tolist(),
               "pf": float(pf[i]), "feasible": bool(feasible[i])}
        if pareto is not None:
            row["pareto"] = bool(pareto[i])
        rows.append(row)
    return rows


def clean_json(obj):
    """Replace non-finite floats by ``None`` and numpy scalars by Python ones."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean_json(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_record(record) -> str:
    return json.dumps(record, sort_keys=True, indent=1) + "\n"


def front_csv_rows(rows, n_design, n_obj, validated=False):
    header = [f"theta_{i + 1}" for i in range(n_design)] + [f"f_{i + 1}" for i in range(n_obj)] + ["pf", "feasible"]
    if validated:
        header.append("pareto")
    out = [header]
    for r in rows:
        line = [repr(v) for v in r["design"]] + ["" if v is None else repr(v) for v in r["objectives"]]
        line += ["" if r["pf"] is None else repr(r["pf"]), int(r["feasible"])]
        if validated:
            line.append(int(r["pareto"]))
        out.append(line)
    return out
