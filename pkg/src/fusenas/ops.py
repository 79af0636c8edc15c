"""Neural layer forward passes built on the autodiff primitives.

All sequence ops take (batch, time, channels) activations. Convolutions and
pools are causal: position t never reads later positions. Attention is
bidirectional; the search target is sequence classification, not generation.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import (
    Tensor,
    add,
    bmm,
    concat,
    embedding_lookup,
    leaky_relu,
    matmul2,
    mul,
    neg,
    pad_last,
    power,
    reduce_max,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    softmax,
    transpose,
    unfold_time,
)

LAYER_NORM_EPS = 1e-5
BATCH_NORM_EPS = 1e-5
BATCH_NORM_MOMENTUM = 0.1


def layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS):
    mu = reduce_mean(x, axis=-1, keepdims=True)
    centered = add(x, neg(mu))
    var = reduce_mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), gamma), beta)


def batch_norm(x, gamma, beta, running_mean, running_var, *,
               training: bool, momentum: float = BATCH_NORM_MOMENTUM,
               eps: float = BATCH_NORM_EPS):
    """Normalize each channel over (batch, time).

    ``running_mean`` and ``running_var`` are plain arrays owned by the caller,
    updated in place during training and used as constants in eval.
    """
    if training:
        mu = reduce_mean(x, axis=(0, 1), keepdims=True)
        centered = add(x, neg(mu))
        var = reduce_mean(mul(centered, centered), axis=(0, 1), keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.data.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * var.data.reshape(-1)
        inv = power(add(var, eps), -0.5)
        xhat = mul(centered, inv)
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = mul(add(x, -running_mean.astype(x.dtype)), inv.astype(x.dtype))
    return add(mul(xhat, gamma), beta)


def conv(x, weight, bias, kernel: int):
    """Causal 1-D convolution; weight is (kernel*c_in, c_out)."""
    b, t, c = x.shape
    windows = unfold_time(x, kernel)
    flat = reshape(windows, (b, t, kernel * c))
    return add(matmul2(flat, weight), bias)


def separable_conv(x, depth, point, bias, kernel: int):
    """Depthwise (kernel, c_in) filter followed by a pointwise projection."""
    windows = unfold_time(x, kernel)
    mixed = reduce_sum(mul(windows, depth), axis=2)
    return add(matmul2(mixed, point), bias)


def light_conv(x, kernels, kernel: int, reduction: int):
    """Weight-shared convolution: ``reduction`` softmax-normalized kernel rows
    shared across contiguous channel groups. No projection, no bias."""
    b, t, c = x.shape
    weights = softmax(kernels, axis=-1)
    group_of = (np.arange(c) * reduction) // c
    per_channel = embedding_lookup(weights, group_of)     # (c, kernel)
    taps = transpose(per_channel, (1, 0))                 # (kernel, c)
    windows = unfold_time(x, kernel)
    return reduce_sum(mul(windows, taps), axis=2)


def attention(x, wq, wk, wv, wo, heads: int):
    """Multi-head self-attention over the full sequence (no causal mask)."""
    b, t, _ = x.shape
    width = wq.shape[-1] if isinstance(wq, np.ndarray) else wq.data.shape[-1]
    head_dim = width // heads

    def split_heads(m):
        m = reshape(m, (b, t, heads, head_dim))
        m = transpose(m, (0, 2, 1, 3))
        return reshape(m, (b * heads, t, head_dim))

    q = split_heads(matmul2(x, wq))
    k = split_heads(matmul2(x, wk))
    v = split_heads(matmul2(x, wv))
    scores = mul(bmm(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(head_dim))
    ctx = bmm(softmax(scores, axis=-1), v)
    ctx = reshape(ctx, (b, heads, t, head_dim))
    ctx = transpose(ctx, (0, 2, 1, 3))
    ctx = reshape(ctx, (b, t, width))
    return matmul2(ctx, wo)


def glu(x, w, v):
    return mul(matmul2(x, w), sigmoid(matmul2(x, v)))


def max_pool(x, kernel: int):
    windows = unfold_time(x, kernel, pad_value=-np.inf)
    return reduce_max(windows, axis=2)


def avg_pool(x, kernel: int):
    b, t, c = x.shape
    windows = unfold_time(x, kernel)
    total = reduce_sum(windows, axis=2)
    valid = np.minimum(np.arange(t) + 1, kernel).astype(x.dtype)
    return mul(total, (1.0 / valid).reshape(1, t, 1))


def swish(x):
    return mul(x, sigmoid(x))


ACTIVATIONS = {"relu": relu, "leaky_relu": leaky_relu, "swish": swish}


def positional_signal(length: int, width: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal position code, shape (1, length, width)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(width, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (idx // 2)) / max(width, 1))
    signal = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return signal[None].astype(dtype)


def combine(values, combiner: str, *, pad_to: int | None = None):
    """Merge block-branch outputs: concat joins channels, add and mul
    zero-pad narrower operands to the widest."""
    if combiner == "concat":
        return concat(values, axis=-1) if len(values) > 1 else values[0]
    width = pad_to if pad_to is not None else max(v.shape[-1] for v in values)
    padded = [pad_last(v, width) for v in values]
    out = padded[0]
    for v in padded[1:]:
        out = add(out, v) if combiner == "add" else mul(out, v)
    return out
