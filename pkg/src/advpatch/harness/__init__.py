"""Command-line front end and experiment drivers."""

from .config import ConfigError, ExperimentConfig, GateFailure, load_config

__all__ = ["ConfigError", "ExperimentConfig", "GateFailure", "load_config"]
