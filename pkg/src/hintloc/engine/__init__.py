from . import blocks, checkpoint, ops, optim, params
from .tensor import Tape, Tensor, active_tape

__all__ = ["Tape", "Tensor", "active_tape",
           "blocks", "checkpoint", "ops", "optim", "params"]
