"""Benchmark problems, baseline strategies and front validation."""

from .problems import PROBLEMS, BenchmarkProblem, Protocol, get_problem
from .runner import STRATEGIES, SURROGATES, dumps_record, run_strategy, validate_front

__all__ = ["PROBLEMS", "BenchmarkProblem", "Protocol", "get_problem", "STRATEGIES", "SURROGATES",
           "dumps_record", "run_strategy", "validate_front"]
