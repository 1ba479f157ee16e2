"""Tiny MLP decoders with hand-written backward passes.

Inputs are row-major batches ``(N, d_in)``; a single vector is treated as a
batch of one and returned as a vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch

HEADS = ("sigmoid", "tanh", "linear")


@dataclass
class MlpParams:
    weights: list  # W_l with shape (d_in, d_out)
    biases: list
    head: str = "linear"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head activation {self.head!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (W.shape[1],):
                raise ValueError(f"layer {l}: bias {b.shape} does not match weight {W.shape}")
            if l and W.shape[0] != self.weights[l - 1].shape[1]:
                raise ValueError(f"layer {l}: input dim {W.shape[0]} does not chain")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def activations(self) -> tuple[str, ...]:
        return ("relu",) * (len(self.weights) - 1) + (self.head,)

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def tensors(self) -> dict:
        out = {}
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{l}"] = W
            out[f"b{l}"] = b
        return out


def init_mlp(dims, head, rng, dtype=np.float64) -> MlpParams:
    """Uniform ``+-1/sqrt(fan_in)`` weights and zero biases."""
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype))
        biases.append(np.zeros(d_out, dtype=dtype))
    return MlpParams(weights, biases, head)


def _apply_head(head, z):
    if head == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if head == "tanh":
        return np.tanh(z)
    return z


def _head_grad(head, y, g):
    if head == "sigmoid":
        return g * y * (1.0 - y)
    if head == "tanh":
        return g * (1.0 - y * y)
    return g


def mlp_forward(params: MlpParams, x, return_cache: bool = False):
    single = np.ndim(x) == 1
    h = np.atleast_2d(x)
    if h.shape[1] != params.dims[0]:
        raise DimensionMismatch(f"input dim {h.shape[1]} != first layer dim {params.dims[0]}")
    inputs = []
    n = len(params.weights)
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ W + b
        h = np.maximum(z, 0) if l < n - 1 else _apply_head(params.head, z)
    out = h[0] if single else h
    if return_cache:
        return out, (inputs, h)
    return out


def mlp_backward(params: MlpParams, x, grad, cache=None):
    """Reverse pass; returns ``({"W0": ..., "b0": ..., ...}, dx)``.

    ``cache`` is the second value of ``mlp_forward(..., return_cache=True)``;
    without it the forward pass is recomputed from ``x``.
    """
    single = np.ndim(x) == 1
    if cache is None:
        _, cache = mlp_forward(params, x, return_cache=True)
    inputs, y = cache
    g = _head_grad(params.head, y, np.atleast_2d(grad))
    grads = {}
    for l in range(len(params.weights) - 1, -1, -1):
        h = inputs[l]
        grads[f"W{l}"] = h.T @ g
        grads[f"b{l}"] = g.sum(axis=0)
        g = g @ params.weights[l].T
        if l > 0:
            g = g * (h > 0)
    return grads, (g[0] if single else g)


# ---------------------------------------------------------------------------
# positional encoding


@dataclass(frozen=True)
class PosEncConfig:
    n_freq: int = 4
    include_input: bool = True

    def __post_init__(self):
        if self.n_freq < 0:
            raise ValueError("n_freq must be >= 0")

    def out_dim(self, d: int = 3) -> int:
        return d * 2 * self.n_freq + (d if self.include_input else 0)


def posenc(v, cfg: PosEncConfig = PosEncConfig()):
    """``[v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(F-1) pi v), cos(2^(F-1) pi v)]``."""
    v = np.asarray(v)
    parts = [v] if cfg.include_input else []
    for k in range(cfg.n_freq):
        a = (2.0 ** k) * np.pi * v
        parts.append(np.sin(a))
        parts.append(np.cos(a))
    if not parts:
        return np.zeros(v.shape[:-1] + (0,), dtype=v.dtype)
    return np.concatenate(parts, axis=-1)


def posenc_backward(v, grad, cfg: PosEncConfig = PosEncConfig()):
    v = np.asarray(v)
    d = v.shape[-1]
    dv = np.zeros_like(v, dtype=np.result_type(v, grad))
    col = 0
    if cfg.include_input:
        dv += grad[..., :d]
        col = d
    for k in range(cfg.n_freq):
        f = (2.0 ** k) * np.pi
        a = f * v
        dv += grad[..., col:col + d] * f * np.cos(a)
        dv -= grad[..., col + d:col + 2 * d] * f * np.sin(a)
        col += 2 * d
    return dv


# ---------------------------------------------------------------------------
# the two decoders


def decode_color(feature, v_c, params: MlpParams, cfg: PosEncConfig = PosEncConfig(), return_cache=False):
    """RGB in (0, 1) from triplane features and the canonical view direction."""
    x = np.concatenate([np.atleast_2d(feature), np.atleast_2d(posenc(v_c, cfg)).astype(np.asarray(feature).dtype)], axis=1)
    if x.shape[1] != params.dims[0]:
        raise DimensionMismatch(f"color decoder expects {params.dims[0]} inputs, got {x.shape[1]}")
    y, cache = mlp_forward(params, x, return_cache=True)
    if np.ndim(feature) == 1:
        y = y[0]
    return (y, (x, cache)) if return_cache else y


def decode_color_backward(feature, v_c, params, grad, cache, cfg: PosEncConfig = PosEncConfig()):
    """Returns (param grads, d feature, d v_c)."""
    x, mcache = cache
    grads, dx = mlp_backward(params, x, np.atleast_2d(grad), mcache)
    nf = np.atleast_2d(feature).shape[1]
    dv = posenc_backward(np.atleast_2d(v_c), dx[:, nf:], cfg)
    return grads, dx[:, :nf], dv


def decode_opacity_offset(l_b, l_r, params: MlpParams, return_cache=False):
    """Opacity offset in (-1, 1) (or a tanh-bounded offset vector) from the two line features."""
    x = np.concatenate([np.atleast_2d(l_b), np.atleast_2d(l_r)], axis=1)
    if x.shape[1] != params.dims[0]:
        raise DimensionMismatch(f"opacity decoder expects {params.dims[0]} inputs, got {x.shape[1]}")
    y, cache = mlp_forward(params, x, return_cache=True)
    if y.shape[1] == 1:
        y = y[:, 0]
    if np.ndim(l_b) == 1:
        y = y[0]
    return (y, (x, cache)) if return_cache else y


def decode_opacity_offset_backward(params, grad, cache, n_b_feat: int):
    """Returns (param grads, d l_b, d l_r)."""
    x, mcache = cache
    g = np.asarray(grad)
    g = g.reshape(len(x), -1)
    grads, dx = mlp_backward(params, x, g, mcache)
    return grads, dx[:, :n_b_feat], dx[:, n_b_feat:]
