"""
Forward/backward primitives: 3x3 same-padding convolution, average pooling, ReLU, dense, sigmoid
"""
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """x: (C_in, H, W), w: (C_out, C_in, 3, 3) -> (C_out, H, W) plus the im2col windows"""
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))
    out = np.tensordot(w, windows, axes=([1, 2, 3], [0, 3, 4])) + b[:, None, None]
    return out, windows


def conv3x3_backward(
    grad: np.ndarray, windows: np.ndarray, w: np.ndarray, need_input_grad: bool = True
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (d input, d weights, d bias)"""
    dw = np.tensordot(grad, windows, axes=([1, 2], [1, 2]))
    db = grad.sum(axis=(1, 2))
    if not need_input_grad:
        return None, dw, db
    padded = np.pad(grad, ((0, 0), (1, 1), (1, 1)))
    grad_windows = sliding_window_view(padded, (3, 3), axis=(1, 2))
    dx = np.tensordot(w[:, :, ::-1, ::-1], grad_windows, axes=([0, 2, 3], [0, 3, 4]))
    return dx, dw, db


def avgpool_forward(x: np.ndarray, k: int) -> np.ndarray:
    c, h, w = x.shape
    return x.reshape(c, h // k, k, w // k, k).mean(axis=(2, 4))


def avgpool_backward(grad: np.ndarray, k: int) -> np.ndarray:
    return np.repeat(np.repeat(grad, k, axis=1), k, axis=2) / float(k * k)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad: np.ndarray, pre: np.ndarray) -> np.ndarray:
    # subgradient 0 at 0
    return grad * (pre > 0)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return w @ x + b


def dense_backward(grad: np.ndarray, x: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return w.T @ grad, np.outer(grad, x), grad


# outputs stay strictly inside (0, 1) even where float64 tanh saturates
SIGMOID_EPS = 1e-12


def sigmoid(x):
    s = 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))
    return np.clip(s, SIGMOID_EPS, 1.0 - SIGMOID_EPS)
