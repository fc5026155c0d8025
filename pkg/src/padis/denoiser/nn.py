"""Minimal reverse-mode layers for a 3x3 fully convolutional network.

Activations are kept channels-last (``B, H, W, C``) so each convolution tap is a
plain matrix product. Every layer caches what its backward pass
needs during ``forward``; ``backward`` consumes the upstream gradient, stores
parameter gradients on the layer and returns the gradient w.r.t. its input.
"""
from __future__ import annotations

import numpy as np

_TAPS = [(dy, dx) for dy in range(3) for dx in range(3)]


class Conv3x3:
    """Zero-padded 'same' convolution; weight layout ``(9 * c_in, c_out)``, tap-major.

    The padded input is flattened to rows of a 2D buffer so every tap becomes a
    contiguous row-shifted slice and one small matmul; outputs computed at padding
    positions are discarded.
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = weight
        self.bias = bias
        self.grad_weight = np.zeros_like(weight)
        self.grad_bias = np.zeros_like(bias)
        self._buf = None
        self._shape = None

    @property
    def c_in(self) -> int:
        return self.weight.shape[0] // 9

    @property
    def c_out(self) -> int:
        return self.weight.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def grads(self) -> list[np.ndarray]:
        return [self.grad_weight, self.grad_bias]

    @staticmethod
    def _offsets(W: int) -> list[int]:
        return [(dy - 1) * (W + 2) + (dx - 1) for dy, dx in _TAPS]

    def forward(self, x: np.ndarray) -> np.ndarray:
        B, H, W, C = x.shape
        if C != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {C}")
        n, G = B * (H + 2) * (W + 2), W + 3
        buf = np.zeros((n + 2 * G, C), dtype=x.dtype)
        buf[G:G + n].reshape(B, H + 2, W + 2, C)[:, 1:-1, 1:-1, :] = x
        out = np.zeros((n, self.c_out), dtype=x.dtype)
        for t, off in enumerate(self._offsets(W)):
            out += buf[G + off:G + off + n] @ self.weight[t * C:(t + 1) * C]
        self._buf, self._shape = buf, x.shape
        out = out.reshape(B, H + 2, W + 2, self.c_out)[:, 1:-1, 1:-1, :]
        return out + self.bias

    def backward(self, grad: np.ndarray) -> np.ndarray:
        B, H, W, C = self._shape
        n, G = B * (H + 2) * (W + 2), W + 3
        gfull = np.zeros((B, H + 2, W + 2, self.c_out), dtype=grad.dtype)
        gfull[:, 1:-1, 1:-1, :] = grad
        g = gfull.reshape(n, self.c_out)
        buf = self._buf
        gbuf = np.zeros_like(buf)
        gw = np.empty_like(self.weight)
        for t, off in enumerate(self._offsets(W)):
            sl = slice(G + off, G + off + n)
            gw[t * C:(t + 1) * C] = buf[sl].T @ g
            gbuf[sl] += g @ self.weight[t * C:(t + 1) * C].T
        self.grad_weight = gw
        self.grad_bias = grad.sum(axis=(0, 1, 2))
        return gbuf[G:G + n].reshape(B, H + 2, W + 2, C)[:, 1:-1, 1:-1, :]


class SiLU:
    def __init__(self):
        self._x = None
        self._sig = None

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x):
        sig = 0.5 * (1.0 + np.tanh(0.5 * x))  # overflow-free logistic
        self._x, self._sig = x, sig
        return x * sig

    def backward(self, grad):
        x, sig = self._x, self._sig
        return grad * (sig * (1.0 + x * (1.0 - sig)))


class ReLU:
    def __init__(self):
        self._mask = None

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0).astype(grad.dtype, copy=False)


ACTIVATIONS = {"silu": SiLU, "relu": ReLU}


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads()]
