"""Federated-learning simulation with equalized client scheduling.

The package wires a minimal federated averaging engine to a
participation-equalizing client scheduler, a performance-based outlier
guard, synthetic non-IID data generation, and fairness/convergence
metrics, plus a CLI for reproducible seeded experiments.
"""

from .config import ExperimentConfig, default_config, load_config_file
from .data_fabric import ClientDataset, DatasetSpec, generate, generate_test_set
from .fl_engine import LocalUpdate, ModelParams, TrainConfig, aggregate, evaluate, local_train
from .harness import ExperimentError, RunLog, compare, export_run, run_experiment
from .metrics import (
    ConvergenceRecord,
    FairnessInput,
    data_quality,
    jain_fairness_index,
    rounds_to_accuracy,
    time_to_accuracy,
)
from .outlier_guard import GuardConfig, PerformanceEvent, SuspicionLedger, is_suspended, record_round
from .selector import (
    ClientTrackerRecord,
    RoundPlan,
    SelectionConfig,
    end_of_training_audit,
    make_tracker,
    select_round,
    slots_available,
    update_tracker,
)

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "default_config",
    "load_config_file",
    "ClientDataset",
    "DatasetSpec",
    "generate",
    "generate_test_set",
    "LocalUpdate",
    "ModelParams",
    "TrainConfig",
    "aggregate",
    "evaluate",
    "local_train",
    "ExperimentError",
    "RunLog",
    "compare",
    "export_run",
    "run_experiment",
    "ConvergenceRecord",
    "FairnessInput",
    "data_quality",
    "jain_fairness_index",
    "rounds_to_accuracy",
    "time_to_accuracy",
    "GuardConfig",
    "PerformanceEvent",
    "SuspicionLedger",
    "is_suspended",
    "record_round",
    "ClientTrackerRecord",
    "RoundPlan",
    "SelectionConfig",
    "end_of_training_audit",
    "make_tracker",
    "select_round",
    "slots_available",
    "update_tracker",
]
