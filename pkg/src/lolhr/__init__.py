"""Local Latin hypercube refinement for reliability-based robust design optimization."""

from .core import Dataset, Marginal, Objective, ProblemSpec, RandomVector, sampling_bounds
from .moo import MooConfig, ParetoArchive, hvi, nsga2
from .refine import LolhrSettings, lolhr_run
from .reliability import ReliabilityConfig, ds_pf, mc_pf

__all__ = ["Dataset", "Marginal", "Objective", "ProblemSpec", "RandomVector", "sampling_bounds",
           "MooConfig", "ParetoArchive", "hvi", "nsga2", "LolhrSettings", "lolhr_run",
           "ReliabilityConfig", "ds_pf", "mc_pf"]
__version__ = "0.1.0"
