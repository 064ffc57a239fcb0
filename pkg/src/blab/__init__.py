"""Simulation laboratory for low-rank bandits over two-sided product matrices."""

from .env import Environment, RegretTrace, generate_contextual
from .errors import BlabError, ConfigError
from .estimator import ObservationSet, SolverConfig, forced_sample_estimate, row_enhance, solve_nuclear_norm
from .experiment import ExperimentConfig, load_config, parse_config, run, sweep
from .matrix_core import generate_low_rank, near_optimal_count, subsampling_cost
from .policies import LrbConfig, LrbPolicy, build_policy, ss_lrb_policy, ss_ucb_policy, ucb_policy

__version__ = "0.1.0"
