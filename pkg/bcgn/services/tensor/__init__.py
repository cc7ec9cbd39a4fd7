"""
Dense tensors with reverse-mode automatic differentiation.
"""

from .gradcheck import finite_diff_check
from .rng import Rng
from .tensor import Function, Tape, Tensor, active_tape, backward, gradients_for

__all__ = [
    "Function",
    "Rng",
    "Tape",
    "Tensor",
    "active_tape",
    "backward",
    "finite_diff_check",
    "gradients_for",
]
