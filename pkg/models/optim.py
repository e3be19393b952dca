"""Adam optimizer and mean-squared-error loss"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from core.errors import NumericFault, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moment accumulators keyed by parameter name"""
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState) -> AdamState:
    """Bias-corrected Adam update applied to params in place."""
    for name, grad in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter '{name}'")
        if grad.shape != params[name].shape:
            raise ShapeError(f"gradient shape {grad.shape} != parameter shape {params[name].shape} for '{name}'")
        if not np.all(np.isfinite(grad)):
            raise NumericFault(f"non-finite gradient for parameter '{name}' at step {state.step + 1}")

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    for name, grad in grads.items():
        param = params[name]
        m = state.m.setdefault(name, np.zeros_like(param))
        v = state.v.setdefault(name, np.zeros_like(param))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        param -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)
    return state


def mse_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean over all elements of the squared error, and its gradient wrt pred"""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.mean(diff * diff)), (2.0 / n) * diff
