"""Domain-incremental continual learning with reservoir replay and distillation."""

from .datagen import DomainSequence, DomainShift, DomainTask, Sample, Samples, SyntheticConfig, generate_synthetic_stream
from .estimator import DomainIncrementalClassifier
from .exceptions import ConfigError, DataWarning, InputError, NumericError, ShapeError, TrainingError
from .memory import MemoryBuffer, entropy_select, herding_select, random_select
from .metrics import AccuracyMatrix, aa_curve, average_accuracy, backward_forgetting
from .model import LossConfig, ModelParams
from .trainer import METHODS, MethodConfig, run_sequence

__version__ = "0.1.0"

__all__ = [
    "AccuracyMatrix", "ConfigError", "DataWarning", "DomainIncrementalClassifier", "DomainSequence",
    "DomainShift", "DomainTask", "InputError", "LossConfig", "METHODS", "MemoryBuffer", "MethodConfig",
    "ModelParams", "NumericError", "Sample", "Samples", "ShapeError", "SyntheticConfig", "TrainingError",
    "aa_curve", "average_accuracy", "backward_forgetting", "entropy_select", "generate_synthetic_stream",
    "herding_select", "random_select", "run_sequence",
]
