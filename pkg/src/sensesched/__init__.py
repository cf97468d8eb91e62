"""Two-stage CPU scheduling for sense-react DAG applications.

Stage I assigns subchains to cores, Stage II picks pipelining and time-sharing
fractions, and the simulator replays a schedule against stochastic compute
costs with an online estimator driving periodic re-solves.
"""

from .analytics import ChainMetrics, MetricWeights, chain_metrics_stage1, chain_metrics_stage2, objective
from .estimator import Estimator, classify_modes, nearest_rank, window_estimate
from .model import DagSpec, SpecError, load_spec, parse_spec, render_spec, validate
from .presets import preset
from .simulator import SimConfig, SimulationError, compare_schedules, measure, run
from .stage1 import Stage1Problem, Unsatisfiable, check_allocation, solve_core_allocation
from .stage2 import FractionProblem, GlobalSchedule, build_global_schedule, select_parallelism, solve_fractions

__version__ = "0.1.0"

__all__ = [
    "ChainMetrics", "DagSpec", "Estimator", "FractionProblem", "GlobalSchedule", "MetricWeights", "SimConfig",
    "SimulationError", "SpecError", "Stage1Problem", "Unsatisfiable", "build_global_schedule",
    "chain_metrics_stage1", "chain_metrics_stage2", "check_allocation", "classify_modes", "compare_schedules",
    "load_spec", "measure", "nearest_rank", "objective", "parse_spec", "preset", "render_spec", "run",
    "select_parallelism", "solve_core_allocation", "solve_fractions", "validate", "window_estimate",
]
