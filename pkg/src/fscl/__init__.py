"""Few-shot continual learning under a frozen big-model teacher.

A small trainable classifier learns across disjoint few-shot sessions while
a frozen high-capacity model, supplied as precomputed per-sample features and
class scores, pulls on it two ways: multi-scale feature alignment through a
mutual-information lower bound, and per-sample fusion of the two models'
class distributions through a learned gate.
"""

from .autodiff import (
    Module,
    Parameter,
    Tensor,
    adam_step,
    backward,
    grad_check,
)
from .bundle import (
    TeacherBundle,
    TeacherRecord,
    load_bundle,
    synthetic_teacher,
    teacher_top1_accuracy,
    validate_bundle,
    write_bundle,
)
from .config import ExperimentConfig, parse_config, validate_config
from .data import LabeledDataset, load_dataset, make_blobs, open_dataset, save_dataset
from .decision import DecisionOutput, decide, decision_loss, fuse
from .experiment import run_experiment
from .models import GateNet, MineDiscriminator, StudentModel, StudentOutput
from .protocol import (
    Hyperparams,
    MetricsReport,
    SessionStream,
    TrainState,
    build_sessions,
    compute_metrics,
    evaluate,
    run_session,
)
from .transfer import bet_loss, dv_lower_bound, make_marginal_pairs

__version__ = "0.1.0"

__all__ = [
    "GateNet", "DecisionOutput", "ExperimentConfig", "Hyperparams",
    "LabeledDataset", "MetricsReport", "MineDiscriminator", "Module",
    "Parameter", "SessionStream", "StudentModel", "StudentOutput",
    "TeacherBundle", "TeacherRecord", "Tensor", "TrainState",
    "adam_step", "backward", "bet_loss", "build_sessions", "compute_metrics",
    "decide", "decision_loss", "dv_lower_bound", "evaluate", "fuse",
    "grad_check", "load_bundle", "load_dataset", "make_blobs",
    "make_marginal_pairs", "open_dataset", "parse_config", "run_experiment",
    "run_session", "save_dataset", "synthetic_teacher",
    "teacher_top1_accuracy", "validate_bundle", "validate_config",
    "write_bundle",
]
