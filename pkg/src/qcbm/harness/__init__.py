"""Experiment orchestration: configs, sweeps, result tables and plot data."""

from qcbm.harness.config import ConfigError, ExperimentConfig
from qcbm.harness.experiment import run_baseline, run_experiment
from qcbm.harness.plots import PlotError, emit_plots
from qcbm.harness.results import ResultTable, ResultTableError

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "PlotError",
    "ResultTable",
    "ResultTableError",
    "emit_plots",
    "run_baseline",
    "run_experiment",
]
