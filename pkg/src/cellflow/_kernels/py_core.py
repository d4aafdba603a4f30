"""Pure-numpy implementations of the hot kernels.

Mirrors the signatures of the compiled ``_core`` extension; selected as a
fallback when the extension is unavailable (see package ``__init__``).

All arrays are float64. Dense/softmax kernels take 2-D C-contiguous inputs,
elementwise kernels take flat 1-D views; callers normalize shapes.
"""
from __future__ import annotations

import numpy as np


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = x @ w.T + b for x (B, n), w (m, n), b (m,)."""
    return x @ w.T + b


def dense_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    """Gradients of dense_forward: returns (gx, gw, gb)."""
    gx = gy @ w
    gw = gy.T @ x
    gb = gy.sum(axis=0)
    return gx, gw, gb


def silu(x: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s


def silu_backward(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-x))
    return gy * s * (1.0 + x * (1.0 - s))


def softmax_last(x: np.ndarray) -> np.ndarray:
    """Stabilized softmax along the last axis of a 2-D array."""
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward_last(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def clip_sym(x: np.ndarray, bound: float) -> np.ndarray:
    return np.clip(x, -bound, bound)


def clip_sym_backward(x: np.ndarray, bound: float, gy: np.ndarray) -> np.ndarray:
    g = gy.copy()
    g[np.abs(x) >= bound] = 0.0
    return g
