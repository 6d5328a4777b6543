"""Emulator: configuration, workloads, the run loop and parameter sweeps."""

from .config import ConfigError, ExperimentConfig, parse_config, parse_config_text, parse_quantity, with_overrides
from .engine import NonTermination, RunMetrics, RunResult, run
from .workload import PRESETS, Workload, preset

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "NonTermination",
    "PRESETS",
    "RunMetrics",
    "RunResult",
    "Workload",
    "parse_config",
    "parse_config_text",
    "parse_quantity",
    "preset",
    "run",
    "with_overrides",
]
