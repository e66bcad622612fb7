"""Stratified Monte Carlo estimation of detector error rates."""

from .engine import (
    BLOCK_TRIALS,
    CSV_HEADER,
    ExperimentConfig,
    ExperimentReport,
    GridRecord,
    StratumEstimate,
    StratumRunner,
    SweepResult,
    estimate_stratum,
    read_length,
    run_experiment,
    run_grid_point,
    sweep,
    theory_constants,
    trend_verdicts,
    type1_union_bound,
    wilson_interval,
)
from .rng import stream_generator, stream_key

__all__ = [
    "BLOCK_TRIALS", "CSV_HEADER", "ExperimentConfig", "ExperimentReport", "GridRecord",
    "StratumEstimate", "StratumRunner", "SweepResult", "estimate_stratum", "read_length",
    "run_experiment", "run_grid_point", "sweep", "theory_constants", "trend_verdicts",
    "type1_union_bound", "wilson_interval", "stream_generator", "stream_key",
]
