"""Transformer decoder turning learned queries into class logits and mask
embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError
from .attention import layer_norm, linear, multi_head_attention


@dataclass(frozen=True)
class DecoderConfig:
    num_layers: int = 4
    num_queries: int = 100
    embed_dim: int = 256
    num_heads: int = 8
    ffn_dim: int = 1024

    def __post_init__(self):
        if self.num_queries < 1:
            raise ConfigError("need at least one query")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")


@dataclass
class QueryOutputs:
    class_logits: np.ndarray  # Q x (K+1), last column is no-object
    mask_embeddings: np.ndarray  # Q x C'
    per_layer: list = field(default_factory=list)  # [(class_logits, mask_embeddings)] per layer


def _ffn(x, params, prefix):
    h = np.maximum(linear(x, params, f"{prefix}.fc1"), 0.0)
    return linear(h, params, f"{prefix}.fc2")


def _heads(x, params):
    y = layer_norm(x, params, "decoder.norm")
    return linear(y, params, "decoder.class_head"), linear(y, params, "decoder.mask_head")


def decoder_forward(query_embeds, memory, config, params, deep_a=False):
    """Pre-norm layers of self-attention, cross-attention and FFN.

    ``memory`` is the flattened coarsest feature map (M x F); it passes
    through ``decoder.input_proj`` when the fixture has one. Optional
    ``decoder.query_pos`` / ``decoder.memory_pos`` tensors are added to
    attention queries and keys.
    """
    x = np.asarray(query_embeds, dtype=np.float64)
    mem = np.asarray(memory, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.embed_dim:
        raise ShapeError(f"query embeddings must be Q x {config.embed_dim}, got {x.shape}")
    if "decoder.input_proj.weight" in params:
        mem = linear(mem, params, "decoder.input_proj")
    if mem.shape[1] != config.embed_dim:
        raise ShapeError(f"memory has {mem.shape[1]} channels, decoder expects {config.embed_dim}")
    qpos = np.asarray(params["decoder.query_pos"], np.float64) if "decoder.query_pos" in params else 0.0
    mpos = np.asarray(params["decoder.memory_pos"], np.float64) if "decoder.memory_pos" in params else 0.0

    per_layer = []
    h = config.num_heads
    for i in range(config.num_layers):
        pre = f"decoder.layers.{i}"
        y = layer_norm(x, params, f"{pre}.norm1")
        x = x + multi_head_attention(y + qpos, y + qpos, y, params, f"{pre}.self_attn", h)
        y = layer_norm(x, params, f"{pre}.norm2")
        x = x + multi_head_attention(y + qpos, mem + mpos, mem, params, f"{pre}.cross_attn", h)
        y = layer_norm(x, params, f"{pre}.norm3")
        x = x + _ffn(y, params, f"{pre}.ffn")
        if deep_a:
            per_layer.append(_heads(x, params))
    cls, emb = _heads(x, params)
    return QueryOutputs(cls, emb, per_layer)
