"""Small reverse-mode autodiff engine with the layers the codec needs."""

from .checkpoint import CheckpointError, dump_checkpoint, load_checkpoint
from .functional import (
    ContractError,
    cross_entropy,
    dense_forward,
    gru_sequence,
    gru_step,
    gru_step_array,
)
from .layers import GRU, Dense, Embedding, LayerSpec, Module, param_count
from .optim import Adam, AdamState, TrainingDiverged, adam_step, clip_gradients, global_norm
from .tensor import NonFiniteError, Tensor

__all__ = [
    "Adam",
    "AdamState",
    "CheckpointError",
    "ContractError",
    "Dense",
    "Embedding",
    "GRU",
    "LayerSpec",
    "Module",
    "NonFiniteError",
    "Tensor",
    "TrainingDiverged",
    "adam_step",
    "clip_gradients",
    "cross_entropy",
    "dense_forward",
    "dump_checkpoint",
    "global_norm",
    "gru_sequence",
    "gru_step",
    "gru_step_array",
    "load_checkpoint",
    "param_count",
]
