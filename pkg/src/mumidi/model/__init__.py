"""Recurrent encoder-decoder that generates accompaniment tracks from a condition."""

from .checkpoint import FORMAT_VERSION, Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import TINY, InvalidConfig, ModelConfig
from .generate import RetryExhausted, SamplingConfig, generate, sample_index
from .network import AccompanimentModel, count_parameters, param_breakdown, param_count
from .train import NonFiniteLoss, TrainConfig, TrainResult, build_model, example_loss, make_example, score, train

__all__ = [
    "FORMAT_VERSION",
    "TINY",
    "Checkpoint",
    "CheckpointError",
    "InvalidConfig",
    "ModelConfig",
    "NonFiniteLoss",
    "AccompanimentModel",
    "RetryExhausted",
    "SamplingConfig",
    "TrainConfig",
    "TrainResult",
    "build_model",
    "count_parameters",
    "example_loss",
    "generate",
    "load_checkpoint",
    "make_example",
    "param_breakdown",
    "param_count",
    "sample_index",
    "save_checkpoint",
    "score",
    "train",
]
