"""
ADAM optimizer and learning-rate schedule.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from bcgn.core.errors import ConfigValidationError, ShapeError
from bcgn.schemas.config_schemas import TrainConfig
from bcgn.services.tensor import Tensor

ADAM_EPS = 1e-8


@dataclass
class OptimState:
    """First/second moments per parameter name and the number of steps taken."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, Tensor]) -> "OptimState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.items()},
            v={name: np.zeros_like(t.data) for name, t in params.items()},
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Tensor],
    state: OptimState,
    lr: float,
    beta1: float = 0.5,
    beta2: float = 0.999,
    eps: float = ADAM_EPS,
) -> Tuple[Dict[str, Tensor], OptimState]:
    """
    One bias-corrected ADAM update.

    Args:
        params: Current parameters by name
        grads: Gradients with the same names and shapes
        state: Moments for the same names (missing entries start at zero)
        lr: Step size
        beta1: First-moment decay
        beta2: Second-moment decay
        eps: Denominator offset

    Returns:
        (new parameters, new state); inputs are left untouched
    """
    step = state.step + 1
    correction1 = 1.0 - beta1**step
    correction2 = 1.0 - beta2**step

    new_params: Dict[str, Tensor] = {}
    new_m: Dict[str, np.ndarray] = {}
    new_v: Dict[str, np.ndarray] = {}
    for name, param in params.items():
        if name not in grads:
            raise ShapeError(f"adam_step: missing gradient for '{name}'")
        g = grads[name].data
        if g.shape != param.shape:
            raise ShapeError(f"adam_step: gradient for '{name}' has shape {g.shape}, expected {param.shape}")
        m_prev = state.m.get(name, np.zeros_like(param.data))
        v_prev = state.v.get(name, np.zeros_like(param.data))
        if m_prev.shape != param.shape or v_prev.shape != param.shape:
            raise ShapeError(f"adam_step: optimizer moments for '{name}' do not match {param.shape}")

        dtype = param.dtype
        m = (beta1 * m_prev + (1.0 - beta1) * g).astype(dtype)
        v = (beta2 * v_prev + (1.0 - beta2) * g * g).astype(dtype)
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        new_params[name] = Tensor((param.data - update).astype(dtype), dtype=dtype)
        new_m[name], new_v[name] = m, v

    return new_params, OptimState(m=new_m, v=new_v, step=step)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """
    Learning rate for an epoch.

    Constant for the first ``epochs_constant`` epochs, then decays to zero at
    ``epochs_total`` (linearly, or along a half cosine when
    ``lr_decay="cosine"``).
    """
    if epoch < 0 or epoch > cfg.epochs_total:
        raise ConfigValidationError(f"epoch {epoch} outside [0, {cfg.epochs_total}]")
    if epoch < cfg.epochs_constant:
        return cfg.lr
    decay_epochs = cfg.epochs_total - cfg.epochs_constant
    if decay_epochs == 0:
        return cfg.lr if epoch < cfg.epochs_total else 0.0
    progress = (epoch - cfg.epochs_constant) / decay_epochs
    if cfg.lr_decay == "cosine":
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))
    return cfg.lr * (1.0 - progress)
