"""Uncertainty-aware offloading of LLM queries in multi-server mobile edge computing."""
from .assignment import Assignment
from .compute import DelayBreakdown, total_delays
from .harness import ExperimentConfig, RunMetrics, run_experiment, run_iteration
from .radio import RadioParams
from .scenario import Instance, ScenarioConfig, generate_instance, load_instance, save_instance
from .solver import SolverReport, delay_gap, dmin, edge_all, exhaustive, goa, local_all, objective, random_k
from .uncertainty import (
    SynthParams,
    TokenDistribution,
    UncertaintyRecord,
    UncertaintyTrace,
    accuracy_of,
    entropy_uncertainty,
    load_trace,
    margin_uncertainty,
    perplexity_uncertainty,
    synth_trace,
)

__version__ = "0.1.0"
