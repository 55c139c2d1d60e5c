from . import autodiff
from .autodiff import Tensor, no_grad
from .model import ArchSpec, SequenceModel, init_params
from .serial import (
    load_model,
    load_scores,
    read_blob,
    save_model,
    save_scores,
    write_blob,
)
from .train import Optimizer, TrainSpec, apply_model, apply_sliding, fit, window_starts

__all__ = [
    "ArchSpec",
    "Optimizer",
    "SequenceModel",
    "Tensor",
    "TrainSpec",
    "apply_model",
    "apply_sliding",
    "autodiff",
    "fit",
    "init_params",
    "load_model",
    "load_scores",
    "no_grad",
    "read_blob",
    "save_model",
    "save_scores",
    "window_starts",
    "write_blob",
]
