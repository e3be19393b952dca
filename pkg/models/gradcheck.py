"""Central finite-difference checks for the layer engine"""
from typing import Callable, Dict

import numpy as np

from models.layers import LayerStack, Mode


def numerical_gradient(fn: Callable[[], float], array: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """d fn / d array by central differences, perturbing array in place"""
    grad = np.zeros_like(array, dtype=np.float64)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        original = array[idx]
        array[idx] = original + eps
        f_plus = fn()
        array[idx] = original - eps
        f_minus = fn()
        array[idx] = original
        grad[idx] = (f_plus - f_minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def check_stack_gradients(stack: LayerStack, x: np.ndarray, seed: int = 0, eps: float = 1e-4) -> Dict[str, float]:
    """Relative error per parameter (and 'input') for the loss sum(out * R), R random"""
    out = stack.forward(x, Mode.TRAIN)
    projection = np.random.default_rng(seed).standard_normal(out.shape)

    def loss() -> float:
        return float(np.sum(stack.forward(x, Mode.TRAIN) * projection))

    stack.forward(x, Mode.TRAIN)
    grad_input = stack.backward(projection)
    analytic = {name: g.copy() for name, g in stack.gradients().items()}

    errors = {"input": relative_error(grad_input, numerical_gradient(loss, x, eps))}
    for name, param in stack.parameters().items():
        errors[name] = relative_error(analytic[name], numerical_gradient(loss, param, eps))
    stack.clear_cache()
    return errors
