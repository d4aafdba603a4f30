"""Central finite-difference gradient checking.

The oracle only ever calls the forward path, so it stays independent of the
reverse-mode code it validates.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import ParameterSet, backward


def finite_difference(fn, params: ParameterSet, path: str, index: tuple[int, ...],
                      h: float = 1e-5) -> float:
    """d fn / d params[path][index] by central differences."""
    p = params[path]
    orig = p.data[index]
    p.data = p.data.copy()
    p.data[index] = orig + h
    f_plus = fn().item()
    p.data = p.data.copy()
    p.data[index] = orig - h
    f_minus = fn().item()
    p.data = p.data.copy()
    p.data[index] = orig
    return (f_plus - f_minus) / (2.0 * h)


def max_relative_error(fn, params: ParameterSet, rng: np.random.Generator,
                       samples_per_tensor: int = 5, h: float = 1e-5) -> float:
    """Compare analytic gradients of scalar fn() against central differences.

    Samples coordinates per tensor; relative error is |a - f| / max(1, |a|, |f|)
    so tiny gradients are judged on absolute scale.
    """
    grads = backward(fn(), params)
    worst = 0.0
    for path, p in params.items():
        size = p.data.size
        count = min(samples_per_tensor, size)
        flat_choices = rng.choice(size, size=count, replace=False)
        for flat in flat_choices:
            index = np.unravel_index(int(flat), p.data.shape)
            fd = finite_difference(fn, params, path, index, h=h)
            an = float(grads[path][index])
            err = abs(an - fd) / max(1.0, abs(an), abs(fd))
            worst = max(worst, err)
    return worst
