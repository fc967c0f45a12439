"""Bilinear (RESCAL) embeddings, their trainers and test-time fold-in."""

from .foldin import FoldIn
from .kernels import BACKEND
from .model import (
    CheckpointError,
    DictMismatch,
    ModelParams,
    OutOfBounds,
    TrainConfig,
    energy,
    grad_mse,
    init_params,
    load_checkpoint,
    mse_loss,
    probability,
    save_checkpoint,
    score,
    scores,
)
from .trainers import sample_model_triples, train, train_energy, train_mse

__all__ = [
    "BACKEND", "CheckpointError", "DictMismatch", "FoldIn", "ModelParams", "OutOfBounds",
    "TrainConfig", "energy", "grad_mse", "init_params", "load_checkpoint", "mse_loss",
    "probability", "sample_model_triples", "save_checkpoint", "score", "scores", "train",
    "train_energy", "train_mse",
]
