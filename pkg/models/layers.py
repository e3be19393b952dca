"""Fixed-vocabulary layer engine with analytic gradients

Tensors are numpy arrays in NCHW layout (NC for dense layers): float32 for
training, float64 for gradient checks. Every layer caches what its backward
pass needs only when run in train mode; eval mode never mutates a layer.
"""
import logging
from collections import OrderedDict
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core.errors import NumericFault, ParameterError, ShapeError, StateError

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class Layer:
    """Base layer: forward caches in train mode, backward consumes the cache."""

    def __init__(self):
        self._cache = None
        self.grads: Dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        self.check_input(x)
        return self._forward(x, training)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError(f"{self!r}: backward called without a train-mode forward cache")
        grad_input = self._backward(grad)
        self._cache = None
        return grad_input

    def check_input(self, x: np.ndarray) -> None:
        pass

    def _forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def _backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> Dict[str, np.ndarray]:
        return {}

    def buffers(self) -> Dict[str, np.ndarray]:
        """Non-trainable state saved with the model (batch-norm running stats)"""
        return {}

    def clear_cache(self) -> None:
        self._cache = None

    def __repr__(self) -> str:
        return type(self).__name__


def _kaiming(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Layer):
    """Stride-1 'same' cross-correlation; batches are processed in fixed-size chunks."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel_size: int = 5, padding: int = 2, dtype=np.float32, chunk_size: int = 8):
        super().__init__()
        if kernel_size % 2 != 1 or padding != (kernel_size - 1) // 2:
            raise ParameterError("Conv2d supports odd kernels with 'same' padding only")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = padding
        self.chunk_size = chunk_size
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = _kaiming(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in, dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)

    def check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"{self!r} expects (N, {self.in_channels}, H, W), got {x.shape}")

    def _pad(self, x: np.ndarray) -> np.ndarray:
        p = self.padding
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))

    def _correlate(self, xp: np.ndarray, kernel: np.ndarray) -> np.ndarray:
        """(n, C, H+2p, W+2p) x (O, C, k, k) -> (n, O, H, W)"""
        k = self.kernel_size
        out = []
        for start in range(0, xp.shape[0], self.chunk_size):
            windows = sliding_window_view(xp[start:start + self.chunk_size], (k, k), axis=(2, 3))
            out.append(np.tensordot(windows, kernel, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2))
        return np.concatenate(out, axis=0)

    def _forward(self, x, training):
        xp = self._pad(x)
        out = self._correlate(xp, self.weight) + self.bias[None, :, None, None]
        if training:
            self._cache = xp
        return out

    def _backward(self, grad):
        xp = self._cache
        k = self.kernel_size
        grad_w = np.zeros_like(self.weight)
        for start in range(0, xp.shape[0], self.chunk_size):
            windows = sliding_window_view(xp[start:start + self.chunk_size], (k, k), axis=(2, 3))
            grad_w += np.tensordot(grad[start:start + self.chunk_size], windows, axes=([0, 2, 3], [0, 2, 3]))
        self.grads = {"weight": grad_w, "bias": grad.sum(axis=(0, 2, 3))}

        flipped = np.ascontiguousarray(self.weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        return self._correlate(self._pad(grad), flipped)

    def parameters(self):
        return OrderedDict(weight=self.weight, bias=self.bias)

    def __repr__(self):
        return f"Conv2d({self.in_channels}->{self.out_channels}, {self.kernel_size}x{self.kernel_size})"


class BatchNorm2d(Layer):
    """Per-channel normalization; batch statistics in train mode, running ones in eval."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"{self!r} expects (N, {self.channels}, H, W), got {x.shape}")

    def _forward(self, x, training):
        shape = (1, -1, 1, 1)
        if not training:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            x_hat = (x - self.running_mean.reshape(shape)) * inv_std.reshape(shape)
            return self.gamma.reshape(shape) * x_hat + self.beta.reshape(shape)

        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean.reshape(shape)) * inv_std.reshape(shape)

        count = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * count / (count - 1) if count > 1 else var
        m = self.momentum
        self.running_mean[...] = (1 - m) * self.running_mean + m * mean
        self.running_var[...] = (1 - m) * self.running_var + m * unbiased

        self._cache = (x_hat, inv_std)
        return self.gamma.reshape(shape) * x_hat + self.beta.reshape(shape)

    def _backward(self, grad):
        x_hat, inv_std = self._cache
        axes = (0, 2, 3)
        count = grad.shape[0] * grad.shape[2] * grad.shape[3]
        self.grads = {"gamma": (grad * x_hat).sum(axis=axes), "beta": grad.sum(axis=axes)}

        d_hat = grad * self.gamma.reshape(1, -1, 1, 1)
        sum_d = d_hat.sum(axis=axes, keepdims=True)
        sum_dx = (d_hat * x_hat).sum(axis=axes, keepdims=True)
        return inv_std.reshape(1, -1, 1, 1) / count * (count * d_hat - sum_d - x_hat * sum_dx)

    def parameters(self):
        return OrderedDict(gamma=self.gamma, beta=self.beta)

    def buffers(self):
        return OrderedDict(running_mean=self.running_mean, running_var=self.running_var)

    def __repr__(self):
        return f"BatchNorm2d({self.channels})"


class ReLU(Layer):
    def _forward(self, x, training):
        if training:
            self._cache = x > 0
        return np.maximum(x, 0)

    def _backward(self, grad):
        return grad * self._cache


class MaxPool2x2(Layer):
    """2x2 window, stride 2; gradient goes to the recorded argmax (first on ties)."""

    def check_input(self, x):
        if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
            raise ShapeError(f"{self!r} expects (N, C, even H, even W), got {x.shape}")

    def _forward(self, x, training):
        n, c, h, w = x.shape
        windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        argmax = windows.argmax(axis=-1)
        if training:
            self._cache = (argmax, x.shape)
        return np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]

    def _backward(self, grad):
        argmax, (n, c, h, w) = self._cache
        routed = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad.dtype)
        np.put_along_axis(routed, argmax[..., None], grad[..., None], axis=-1)
        return routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


class Flatten(Layer):
    def _forward(self, x, training):
        if training:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def _backward(self, grad):
        return grad.reshape(self._cache)


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = _kaiming(rng, (out_features, in_features), in_features, dtype)
        self.bias = np.zeros(out_features, dtype=dtype)

    def check_input(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self!r} expects (N, {self.in_features}), got {x.shape}")

    def _forward(self, x, training):
        if training:
            self._cache = x
        return x @ self.weight.T + self.bias

    def _backward(self, grad):
        x = self._cache
        self.grads = {"weight": grad.T @ x, "bias": grad.sum(axis=0)}
        return grad @ self.weight

    def parameters(self):
        return OrderedDict(weight=self.weight, bias=self.bias)

    def __repr__(self):
        return f"Linear({self.in_features}->{self.out_features})"


class LayerStack:
    """Sequential container over the fixed layer vocabulary"""

    def __init__(self, layers: Sequence[Layer], input_shape: Tuple[int, ...]):
        self.layers: List[Layer] = list(layers)
        self.input_shape = tuple(input_shape)

    def forward(self, x: np.ndarray, mode: Mode = Mode.TRAIN) -> np.ndarray:
        mode = Mode(mode)
        if x.ndim != len(self.input_shape) + 1 or x.shape[1:] != self.input_shape:
            raise ShapeError(f"layer 0 ({self.layers[0]!r}): expected input (N, {self.input_shape}), got {x.shape}")
        if mode is Mode.TRAIN:
            return self._run(x, training=True)
        # one sample at a time so results do not depend on batch packing
        return np.concatenate([self._run(x[i:i + 1], training=False) for i in range(x.shape[0])], axis=0)

    def _run(self, x: np.ndarray, training: bool) -> np.ndarray:
        for idx, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, training)
            except ShapeError as e:
                raise ShapeError(f"layer {idx} ({layer!r}): {e}") from e
            if not np.all(np.isfinite(x)):
                raise NumericFault(f"non-finite activation after layer {idx} ({layer!r})")
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for idx in range(len(self.layers) - 1, -1, -1):
            try:
                grad = self.layers[idx].backward(grad)
            except StateError as e:
                raise StateError(f"layer {idx}: {e}") from e
        return grad

    def clear_cache(self) -> None:
        for layer in self.layers:
            layer.clear_cache()

    def parameters(self) -> Dict[str, np.ndarray]:
        params = OrderedDict()
        for idx, layer in enumerate(self.layers):
            for name, value in layer.parameters().items():
                params[f"{idx}.{name}"] = value
        return params

    def gradients(self) -> Dict[str, np.ndarray]:
        grads = OrderedDict()
        for idx, layer in enumerate(self.layers):
            for name in layer.parameters():
                if name not in layer.grads:
                    raise StateError(f"layer {idx}: no gradient for '{name}'; run backward first")
                grads[f"{idx}.{name}"] = layer.grads[name]
        return grads

    def buffers(self) -> Dict[str, np.ndarray]:
        bufs = OrderedDict()
        for idx, layer in enumerate(self.layers):
            for name, value in layer.buffers().items():
                bufs[f"{idx}.{name}"] = value
        return bufs

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Parameters and buffers in declared layer order"""
        state = OrderedDict()
        for idx, layer in enumerate(self.layers):
            for name, value in {**layer.parameters(), **layer.buffers()}.items():
                state[f"{idx}.{name}"] = value
        return state

    def output_shape(self) -> Tuple[int, ...]:
        dummy = np.zeros((1, *self.input_shape), dtype=np.float64)
        return self._run(dummy, training=False).shape[1:]

    def __repr__(self):
        return "\n".join(f"{idx}: {layer!r}" for idx, layer in enumerate(self.layers))


def forward(stack: LayerStack, x: np.ndarray, mode: Mode = Mode.TRAIN) -> np.ndarray:
    return stack.forward(x, mode)


def backward(stack: LayerStack, loss_grad: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Parameter gradients and the gradient with respect to the input"""
    grad_input = stack.backward(loss_grad)
    return stack.gradients(), grad_input
