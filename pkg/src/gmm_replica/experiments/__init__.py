"""Config-driven simulation campaigns and their CSV outputs."""

from .config import Cell, ConfigError, ExperimentConfig, config_from_dict, load_config
from .runner import (
    CellResult,
    run_all,
    run_campaign,
    run_cell,
    run_coverage_experiment,
    run_histogram_experiment,
    run_power_experiment,
    run_precision_experiment,
)
