"""
SGD with momentum, weight decay and linear learning-rate annealing.

    g'   = g + weight_decay * x          (biases skip the decay term)
    dx_t = momentum * dx_{t-1} - lr(epoch) * g'
    x   += dx_t
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from ...exceptions import DimensionError, NumericalError

logger = logging.getLogger(__name__)

FINAL_RATE_FRACTION = 0.01


def lr_at_epoch(base: float, epoch: int, total_epochs: int) -> float:
    """
    Linear interpolation from base at epoch 0 to base / 100 at the final epoch.
    """
    if total_epochs < 1 or not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside schedule of {total_epochs} epochs")
    if total_epochs == 1:
        return base
    fraction = epoch / (total_epochs - 1)
    return base * (1.0 - (1.0 - FINAL_RATE_FRACTION) * fraction)


def param_group(name: str) -> str:
    """Parameters of the softmax classifier form their own learning-rate group."""
    return "softmax" if name.startswith("softmax") else "conv"


@dataclass
class SgdState:
    """Velocities plus hyperparameters; velocity shapes mirror the parameters."""

    velocities: Dict[str, np.ndarray]
    momentum: float = 0.9
    weight_decay: float = 0.001
    base_rates: Dict[str, float] = field(default_factory=lambda: {"conv": 1e-2, "softmax": 1.0})
    total_epochs: int = 280
    steps: int = 0

    def __post_init__(self):
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight_decay must be non-negative")
        if any(rate <= 0 for rate in self.base_rates.values()):
            raise ValueError(f"learning rates must be positive, got {self.base_rates}")
        if self.total_epochs < 1:
            raise ValueError(f"total_epochs must be positive, got {self.total_epochs}")

    @classmethod
    def from_params(cls, params: Dict[str, np.ndarray], **hyper) -> "SgdState":
        velocities = OrderedDict((name, np.zeros_like(value)) for name, value in params.items())
        return cls(velocities=velocities, **hyper)

    def rate(self, name: str, epoch: int) -> float:
        return lr_at_epoch(self.base_rates[param_group(name)], epoch, self.total_epochs)

    def rates_at(self, epoch: int) -> Dict[str, float]:
        return {group: lr_at_epoch(base, epoch, self.total_epochs)
                for group, base in self.base_rates.items()}


def momentum_step(state: SgdState, params: Dict[str, np.ndarray],
                  grads: Dict[str, np.ndarray], epoch: int) -> Tuple[Dict[str, np.ndarray], SgdState]:
    """
    Apply one update in place.

    Returns:
        (params, state), the same objects, updated

    Raises:
        NumericalError: a gradient holds NaN/Inf; nothing is modified
    """
    for name, grad in grads.items():
        if name not in params or grad.shape != params[name].shape:
            raise DimensionError(f"gradient {name} does not match any parameter shape")
        velocity = state.velocities.get(name)
        if velocity is None or velocity.shape != params[name].shape:
            shape = None if velocity is None else velocity.shape
            raise DimensionError(f"velocity {name} shape {shape} != {params[name].shape}")
        if not np.isfinite(grad).all():
            bad = int(grad.size - np.count_nonzero(np.isfinite(grad)))
            raise NumericalError(
                f"gradient {name} has {bad} non-finite entries at epoch {epoch}, step {state.steps} "
                f"(max |finite| = {np.nanmax(np.abs(np.where(np.isfinite(grad), grad, 0.0))):.3e})"
            )

    for name, grad in grads.items():
        velocity = state.velocities[name]
        decay = 0.0 if name.endswith("bias") else state.weight_decay
        effective = grad + decay * params[name] if decay else grad
        velocity *= state.momentum
        velocity -= state.rate(name, epoch) * effective
        params[name] += velocity

    state.steps += 1
    return params, state
