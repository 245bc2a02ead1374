"""Dense building blocks: linear layers, layer norm, multi-head attention."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ..losses import softmax
from .params import require


def linear(x, params, prefix, bias=True):
    """``x @ W.T + b`` with ``W`` stored as (out, in)."""
    w = require(params, f"{prefix}.weight")
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"{prefix}: input has {x.shape[-1]} features, weight expects {w.shape[1]}")
    y = x @ w.T
    if bias and f"{prefix}.bias" in params:
        y = y + require(params, f"{prefix}.bias")
    return y


def layer_norm(x, params, prefix, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    y = (x - mu) / np.sqrt(var + eps)
    return y * require(params, f"{prefix}.weight") + require(params, f"{prefix}.bias")


def attention_weights(q, k, num_heads):
    """Per-head softmax(q k^T / sqrt(d)) for already-projected q, k.

    Returns (heads, Lq, Lk)."""
    lq, c = q.shape
    lk = k.shape[0]
    d = c // num_heads
    qh = q.reshape(lq, num_heads, d).transpose(1, 0, 2)
    kh = k.reshape(lk, num_heads, d).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(d)
    return softmax(scores, axis=-1)


def multi_head_attention(queries, keys, values, params, prefix, num_heads, return_weights=False):
    """Scaled dot-product attention with learned q/k/v/output projections."""
    queries = np.asarray(queries, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if keys.shape[0] != values.shape[0]:
        raise ShapeError(f"{keys.shape[0]} keys but {values.shape[0]} values")
    q = linear(queries, params, f"{prefix}.q_proj")
    k = linear(keys, params, f"{prefix}.k_proj")
    v = linear(values, params, f"{prefix}.v_proj")
    c = q.shape[1]
    if c % num_heads:
        raise ShapeError(f"embedding dim {c} not divisible by {num_heads} heads")
    attn = attention_weights(q, k, num_heads)
    d = c // num_heads
    vh = v.reshape(v.shape[0], num_heads, d).transpose(1, 0, 2)
    out = (attn @ vh).transpose(1, 0, 2).reshape(q.shape[0], c)
    out = linear(out, params, f"{prefix}.o_proj")
    if return_weights:
        return out, attn
    return out
