"""Minimal numpy autodiff engine: tensors, operators, Adam, checkpoints."""

from . import ops
from .checkpoint import CheckpointError
from .module import Module, kaiming_uniform, parameter
from .optim import Adam, AdamState, OptimizerConfig, adam_step
from .tensor import GraphError, NonFiniteError, Tensor, set_debug

__all__ = [
    "Adam",
    "AdamState",
    "CheckpointError",
    "GraphError",
    "Module",
    "NonFiniteError",
    "OptimizerConfig",
    "Tensor",
    "adam_step",
    "kaiming_uniform",
    "ops",
    "parameter",
    "set_debug",
]
