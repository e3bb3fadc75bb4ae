"""Radio-map estimation with a multi-axis attention encoder and a transposed-conv decoder."""
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, GeoMap, SynthChannelParams, in_memory_dataset, load_dataset, write_dataset
from .metrics import MetricsReport, compute_report
from .model import ModelConfig, get_profile, init_params, model_forward
from .tensor import Tensor, double_precision, no_grad
from .train import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Dataset", "GeoMap", "MetricsReport", "ModelConfig", "SynthChannelParams", "Tensor", "TrainConfig",
    "compute_report", "double_precision", "evaluate", "get_profile", "in_memory_dataset", "init_params",
    "load_checkpoint", "load_dataset", "model_forward", "no_grad", "save_checkpoint", "train",
    "write_dataset",
]
