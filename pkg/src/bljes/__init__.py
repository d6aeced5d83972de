"""Entropy-search Bayesian optimization for bilevel black-box problems."""

__version__ = "0.1.0"

from .acquisition import (  # noqa: E402
    LevelModels,
    McBundle,
    bljes_constrained,
    bljes_coupled,
    bljes_decoupled_f,
    bljes_decoupled_g,
    build_bundle,
    select_next,
)
from .benchmarks import BenchmarkSpec, compute_ground_truth, make_problem  # noqa: E402
from .bilevel import GridSpec, OptimumSample, solve_bilevel_continuous, solve_bilevel_grid  # noqa: E402
from .gp import Dataset, GpHyperparams, GpModel, ObservationRecord, QueryPoint  # noqa: E402
from .regret import RegretTrace, bilevel_simple_regret, regret_components  # noqa: E402
from .runner import RunConfig, RunResult, emit_results, run_experiment  # noqa: E402

__all__ = [
    "BenchmarkSpec", "Dataset", "GpHyperparams", "GpModel", "GridSpec", "LevelModels", "McBundle",
    "ObservationRecord", "OptimumSample", "QueryPoint", "RegretTrace", "RunConfig", "RunResult",
    "bilevel_simple_regret", "bljes_constrained", "bljes_coupled", "bljes_decoupled_f", "bljes_decoupled_g",
    "build_bundle", "compute_ground_truth", "emit_results", "make_problem", "regret_components",
    "run_experiment", "select_next", "solve_bilevel_continuous", "solve_bilevel_grid",
]
