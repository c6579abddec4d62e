"""Experiment harness: configuration, checkpoints, metrics, suites and CLI."""
from .checkpoint import (
    BadMagicError,
    CheckpointError,
    MissingTensorError,
    ShapeMismatchError,
    TruncatedArchiveError,
    UnknownTensorError,
    load_checkpoint,
    save_checkpoint,
)
from .config import ExperimentConfig
from .metrics import MetricsReport, cdf_table, evaluate, evaluate_poses
from .pipeline import Benchmark, Pipeline, build_benchmark
from .suites import SUITES, run_experiment_suite

__all__ = [
    "BadMagicError", "Benchmark", "CheckpointError", "ExperimentConfig", "MetricsReport",
    "MissingTensorError", "Pipeline", "SUITES", "ShapeMismatchError", "TruncatedArchiveError",
    "UnknownTensorError", "build_benchmark", "cdf_table", "evaluate", "evaluate_poses",
    "load_checkpoint", "run_experiment_suite", "save_checkpoint",
]
