"""Task-oriented communications for signal classification, with backdoor and
evasion attacks on the edge device's input.

Subpackages are imported lazily by the caller; the most used names are
re-exported here.
"""

from tcomm.errors import ConfigError, NumericError, ShapeError, TcommError, TrainingDiverged
from tcomm.kernels import BACKEND
from tcomm.pipelines import PipelineKind, TrainConfig, build, evaluate, train
from tcomm.signal import SensingConfig, make_dataset

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "NumericError",
    "PipelineKind",
    "SensingConfig",
    "ShapeError",
    "TcommError",
    "TrainConfig",
    "TrainingDiverged",
    "build",
    "evaluate",
    "make_dataset",
    "train",
]
