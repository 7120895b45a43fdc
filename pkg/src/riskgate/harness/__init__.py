"""Batch experiment harness: configuration, runners, aggregation, CLI."""

from .aggregate import AggregateStats, SeriesStats, aggregate, emit, load_records
from .config import ConfigError, ExperimentConfig, config_from_dict, load_config, save_config
from .runner import BatchError, RunRecord, run_batch, run_world

__all__ = [
    "AggregateStats",
    "BatchError",
    "ConfigError",
    "ExperimentConfig",
    "RunRecord",
    "SeriesStats",
    "aggregate",
    "config_from_dict",
    "emit",
    "load_config",
    "load_records",
    "run_batch",
    "run_world",
    "save_config",
]
