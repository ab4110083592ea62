"""Experiment regimes, run outputs and the command-line interface."""

from .config import REGIMES, ConfigError, ExperimentConfig, load_config_file
from .io import RunWriter, config_digest, read_csv
from .runs import (
    DatasetMissingError,
    RunMetrics,
    quantize_network,
    run,
    run_baseline,
    run_fit_device,
    run_on_device,
    run_sstl,
    run_synth_bench,
    run_transfer_retune,
    subject_quarters,
)
from .training import Trainer, TrainSettings, evaluate

__all__ = [
    "REGIMES", "ConfigError", "ExperimentConfig", "load_config_file", "RunWriter", "config_digest",
    "read_csv", "DatasetMissingError", "RunMetrics", "quantize_network", "run", "run_baseline",
    "run_fit_device", "run_on_device", "run_sstl", "run_synth_bench", "run_transfer_retune",
    "subject_quarters", "Trainer", "TrainSettings", "evaluate",
]
