"""Desk-scale federated-learning poisoning benchmark: attacks, defenses and a config-driven harness."""
from . import attacks, defenses  # noqa: F401  (fills the registries)
from .config import ExperimentConfig, build_config, load_config
from .errors import (BenchError, ConfigurationError, DimensionError, EmptyInputError, HarnessError,
                     IntegrityError, NumericError, UndefinedMetricError)
from .experiment import RunResult, run_experiment
from .metrics import MetricsRecord, tai, tdr
from .registry import algorithms
from .registry import attacks as attack_registry
from .registry import defenses as defense_registry

__version__ = "0.1.0"

__all__ = [
    "BenchError", "ConfigurationError", "DimensionError", "EmptyInputError", "ExperimentConfig",
    "HarnessError", "IntegrityError", "MetricsRecord", "NumericError", "RunResult",
    "UndefinedMetricError", "algorithms", "attack_registry", "build_config", "defense_registry",
    "load_config", "run_experiment", "tai", "tdr",
]
