"""Parameter containers and the small layer zoo used by the models.

Initialization is fan-in-scaled uniform drawn from the parameter set's own
Philox stream in creation order, so a seed fully determines every weight.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ValidationError
from . import tensor as T
from .rng import PortableRng

LN_EPS = 1e-5


class ParameterSet:
    """Named map from parameter path to trainable Tensor."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._rng = PortableRng(seed).spawn("init")
        self._params: dict[str, T.Tensor] = {}

    def add(self, path: str, shape: tuple[int, ...], init: str = "fanin") -> T.Tensor:
        if path in self._params:
            raise ValidationError(f"duplicate parameter path {path!r}")
        if init == "fanin":
            bound = 1.0 / math.sqrt(shape[-1])
            data = self._rng.uniform(-bound, bound, shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ValidationError(f"unknown init {init!r}")
        p = T.Tensor(data, requires_grad=True)
        self._params[path] = p
        return p

    def __getitem__(self, path: str) -> T.Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __len__(self) -> int:
        return len(self._params)

    def paths(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def export(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self._params):
            missing = set(self._params) - set(values)
            extra = set(values) - set(self._params)
            raise ValidationError(
                f"parameter paths mismatch (missing={sorted(missing)}, extra={sorted(extra)})"
            )
        for k, v in values.items():
            arr = np.asarray(v, dtype=np.float64)
            if arr.shape != self._params[k].data.shape:
                raise ValidationError(
                    f"parameter {k!r} shape {arr.shape} != expected {self._params[k].data.shape}"
                )
            self._params[k].data = arr


def backward(loss: T.Tensor, params: ParameterSet) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss for every parameter (zeros if unreachable)."""
    if loss.data.size != 1:
        raise ValidationError("loss must be scalar")
    params.zero_grads()
    loss.backward()
    return {
        k: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for k, p in params.items()
    }


# ---------------------------------------------------------------------------
# layers

def add_dense(params: ParameterSet, path: str, n_in: int, n_out: int) -> None:
    params.add(f"{path}/W", (n_out, n_in), init="fanin")
    params.add(f"{path}/b", (n_out,), init="zeros")


def dense_apply(params: ParameterSet, path: str, x) -> T.Tensor:
    return T.dense(x, params[f"{path}/W"], params[f"{path}/b"])


def add_mlp(params: ParameterSet, prefix: str, dims: list[int]) -> None:
    """dims = [in, hidden..., out]; SiLU between layers, linear output."""
    for i in range(len(dims) - 1):
        add_dense(params, f"{prefix}/l{i}", dims[i], dims[i + 1])


def mlp_apply(params: ParameterSet, prefix: str, x, n_layers: int) -> T.Tensor:
    h = x
    for i in range(n_layers):
        h = dense_apply(params, f"{prefix}/l{i}", h)
        if i < n_layers - 1:
            h = T.silu(h)
    return h


def add_layer_norm(params: ParameterSet, path: str, dim: int) -> None:
    params.add(f"{path}/g", (dim,), init="ones")
    params.add(f"{path}/b", (dim,), init="zeros")


def layer_norm(params: ParameterSet, path: str, x) -> T.Tensor:
    mu = T.tmean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = T.tmean(T.square(xc), axis=-1, keepdims=True)
    xn = xc / T.sqrt(var + LN_EPS)
    return xn * params[f"{path}/g"] + params[f"{path}/b"]


def add_attention_block(params: ParameterSet, prefix: str, dim: int, ffn_width: int) -> None:
    add_layer_norm(params, f"{prefix}/ln1", dim)
    for name in ("q", "k", "v", "o"):
        add_dense(params, f"{prefix}/{name}", dim, dim)
    add_layer_norm(params, f"{prefix}/ln2", dim)
    add_dense(params, f"{prefix}/ffn0", dim, ffn_width)
    add_dense(params, f"{prefix}/ffn1", ffn_width, dim)


def attention_block(params: ParameterSet, prefix: str, tokens, return_weights: bool = False):
    """Pre-norm single-head self-attention + feed-forward over (n, d) tokens."""
    tokens = T.as_tensor(tokens)
    if tokens.ndim != 2 or tokens.shape[0] == 0:
        raise ValidationError("attention_block expects a non-empty (n, d) token matrix")
    d = tokens.shape[1]
    xn = layer_norm(params, f"{prefix}/ln1", tokens)
    q = dense_apply(params, f"{prefix}/q", xn)
    k = dense_apply(params, f"{prefix}/k", xn)
    v = dense_apply(params, f"{prefix}/v", xn)
    scores = T.matmul(q, T.transpose(k)) * (1.0 / math.sqrt(d))
    attn = T.softmax(scores, axis=-1)
    ctx = dense_apply(params, f"{prefix}/o", T.matmul(attn, v))
    h = tokens + ctx
    hn = layer_norm(params, f"{prefix}/ln2", h)
    ff = dense_apply(params, f"{prefix}/ffn1", T.silu(dense_apply(params, f"{prefix}/ffn0", hn)))
    out = h + ff
    if return_weights:
        return out, attn.data.copy()
    return out


def sinusoidal_embedding(t: np.ndarray, dim: int = 16) -> np.ndarray:
    """Fixed sin/cos features of a scalar time in [0, 1]; shape (..., dim)."""
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = 2.0 ** np.arange(half) * (2.0 * math.pi)
    ang = t[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
