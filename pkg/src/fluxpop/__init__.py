"""Hourly neighborhood population from smartphone mobility observations."""

from .analysis import EvalConfig, aggregate_places, daily_series, monthly_report, sweep_k
from .estimator import EstimatorConfig, run_pipeline
from .ingest import Dataset, load_dataset, validate_dataset
from .ipf import harmonize_targets, ipf_fit
from .model import HourMatrix, PopulationTable, TimeIndex, Universe, build_time_index, build_universe, hour_meta
from .synth import SynthConfig, generate_world, observe, true_population

__all__ = [
    "Dataset",
    "EstimatorConfig",
    "EvalConfig",
    "HourMatrix",
    "PopulationTable",
    "SynthConfig",
    "TimeIndex",
    "Universe",
    "aggregate_places",
    "build_time_index",
    "build_universe",
    "daily_series",
    "generate_world",
    "harmonize_targets",
    "hour_meta",
    "ipf_fit",
    "load_dataset",
    "monthly_report",
    "observe",
    "run_pipeline",
    "sweep_k",
    "true_population",
    "validate_dataset",
]

__version__ = "0.1.0"
