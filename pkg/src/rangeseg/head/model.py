"""Parameter layout and end-to-end forward of the desk-scale head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import FixtureError
from .decoder import DecoderConfig, QueryOutputs, decoder_forward
from .inference import predict_masks
from .pixel_decoder import LEVEL_SCALE, UPSAMPLED, PixelEmbeddings, fid_decode, stem_features
from .params import require


@dataclass(frozen=True)
class HeadConfig:
    num_classes: int = 19
    in_channels: int = 5
    feat_channels: int = 128
    embed_channels: int = 256
    pixel_channels: int = 128
    upsample: str = "dupsampling"
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    @property
    def concat_channels(self):
        return 5 * self.feat_channels


def expected_shapes(cfg):
    """name -> shape for every tensor the forward pass reads."""
    f, k = cfg.feat_channels, cfg.num_classes
    d = cfg.decoder
    c = d.embed_dim
    shapes = {}
    for lvl in range(5):
        shapes[f"stem.x{lvl}.weight"] = (f, cfg.in_channels)
        shapes[f"stem.x{lvl}.bias"] = (f,)
    if cfg.upsample == "dupsampling":
        for lvl in UPSAMPLED:
            s = LEVEL_SCALE[lvl]
            shapes[f"pixel.up{lvl}.weight"] = (f * s * s, f)
    shapes["pixel.fuse.weight"] = (cfg.embed_channels, cfg.concat_channels)
    shapes["pixel.out.weight"] = (cfg.pixel_channels, cfg.embed_channels)
    for lvl in UPSAMPLED:
        shapes[f"pixel.aux{lvl}.weight"] = (k, f)
        shapes[f"pixel.aux{lvl}.bias"] = (k,)
    shapes["decoder.query_feat"] = (d.num_queries, c)
    if f != c:
        shapes["decoder.input_proj.weight"] = (c, f)
        shapes["decoder.input_proj.bias"] = (c,)
    for i in range(d.num_layers):
        pre = f"decoder.layers.{i}"
        for attn in ("self_attn", "cross_attn"):
            for proj in ("q_proj", "k_proj", "v_proj", "o_proj"):
                shapes[f"{pre}.{attn}.{proj}.weight"] = (c, c)
                shapes[f"{pre}.{attn}.{proj}.bias"] = (c,)
        for n in ("norm1", "norm2", "norm3"):
            shapes[f"{pre}.{n}.weight"] = (c,)
            shapes[f"{pre}.{n}.bias"] = (c,)
        shapes[f"{pre}.ffn.fc1.weight"] = (d.ffn_dim, c)
        shapes[f"{pre}.ffn.fc1.bias"] = (d.ffn_dim,)
        shapes[f"{pre}.ffn.fc2.weight"] = (c, d.ffn_dim)
        shapes[f"{pre}.ffn.fc2.bias"] = (c,)
    shapes["decoder.norm.weight"] = (c,)
    shapes["decoder.norm.bias"] = (c,)
    shapes["decoder.class_head.weight"] = (k + 1, c)
    shapes["decoder.class_head.bias"] = (k + 1,)
    shapes["decoder.mask_head.weight"] = (cfg.pixel_channels, c)
    shapes["decoder.mask_head.bias"] = (cfg.pixel_channels,)
    return shapes


def init_params(cfg, rng):
    """Random fixture: fan-in scaled normal weights, unit norms, zero biases."""
    params = {}
    for name, shape in expected_shapes(cfg).items():
        if ".norm" in name and name.endswith(".weight"):
            arr = np.ones(shape)
        elif name.endswith(".bias"):
            arr = np.zeros(shape)
        elif name == "decoder.query_feat":
            arr = rng.standard_normal(shape)
        else:
            arr = rng.standard_normal(shape) / np.sqrt(shape[1])
        params[name] = arr.astype(np.float32)
    return params


def check_params(params, cfg):
    for name, shape in expected_shapes(cfg).items():
        require(params, name, shape)
    if "decoder.query_pos" in params:
        require(params, "decoder.query_pos", (cfg.decoder.num_queries, cfg.decoder.embed_dim))


@dataclass
class HeadOutputs:
    queries: QueryOutputs
    pixel: PixelEmbeddings
    mask_logits: np.ndarray  # Q x H x W


def forward(tensor, params, cfg, deep_a=False):
    """(H, W, 5) normalized range tensor -> query outputs and mask logits."""
    h, w = tensor.shape[:2]
    if h % 8 or w % 8:
        raise FixtureError(f"range image {h}x{w} must be divisible by 8")
    feats = stem_features(tensor, params)
    pixel = fid_decode(feats, params, cfg.upsample)
    x4 = feats[4]
    memory = x4.reshape(x4.shape[0], -1).T
    queries = decoder_forward(require(params, "decoder.query_feat"), memory, cfg.decoder, params, deep_a)
    masks = predict_masks(queries.mask_embeddings, pixel.final)
    return HeadOutputs(queries, pixel, masks)
