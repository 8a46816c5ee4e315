"""Config-driven experiment runner and command line interface."""

from .config import ExperimentConfig, ManifestBenchmark, dump_config, load_config, override_seed, parse_config
from .runner import buffer_sweep, emit_plot_data, run_experiment

__all__ = ["ExperimentConfig", "ManifestBenchmark", "buffer_sweep", "dump_config", "emit_plot_data",
           "load_config", "override_seed", "parse_config", "run_experiment"]
