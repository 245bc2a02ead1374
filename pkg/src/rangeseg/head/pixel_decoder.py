"""Fully-interpolation pixel decoder with bilinear or data-dependent
upsampling, plus the stand-in feature pyramid used at desk scale."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError
from .params import require

UPSAMPLED = (2, 3, 4)  # pyramid levels lifted to full resolution
LEVEL_SCALE = {0: 1, 1: 1, 2: 2, 3: 4, 4: 8}


@dataclass
class PixelEmbeddings:
    final: np.ndarray  # C' x H x W
    taps: list = field(default_factory=list)  # upsampled x2, x3, x4


def _interp_matrix(n_in, scale):
    """Rows map output samples to input samples, half-pixel centers."""
    n_out = n_in * scale
    src = (np.arange(n_out) + 0.5) / scale - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    a = np.zeros((n_out, n_in))
    np.add.at(a, (np.arange(n_out), i0), 1.0 - lam)
    np.add.at(a, (np.arange(n_out), i1), lam)
    return a


def bilinear_upsample(feature, scale):
    feature = np.asarray(feature, dtype=np.float64)
    if scale < 1 or int(scale) != scale:
        raise ConfigError(f"upsampling scale must be a positive integer, got {scale}")
    if scale == 1:
        return feature.copy()
    _, h, w = feature.shape
    ah = _interp_matrix(h, int(scale))
    aw = _interp_matrix(w, int(scale))
    return np.einsum("Hh,chw,Ww->cHW", ah, feature, aw)


def pixel_shuffle(x, s):
    """(C*s*s, h, w) -> (C, h*s, w*s); channel c*s*s + i*s + j lands at
    spatial offset (i, j) of each block."""
    cs2, h, w = x.shape
    if cs2 % (s * s):
        raise ShapeError(f"{cs2} channels not divisible by {s * s}")
    c = cs2 // (s * s)
    return x.reshape(c, s, s, h, w).transpose(0, 3, 1, 4, 2).reshape(c, h * s, w * s)


def pixel_unshuffle(x, s):
    c, hs, ws = x.shape
    h, w = hs // s, ws // s
    return x.reshape(c, h, s, w, s).transpose(0, 2, 4, 1, 3).reshape(c * s * s, h, w)


def dupsample(feature, weight, s):
    """Per-location linear map C -> C'*s*s followed by pixel rearrangement."""
    feature = np.asarray(feature, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    c, h, w = feature.shape
    if weight.ndim != 2 or weight.shape[1] != c or weight.shape[0] % (s * s):
        raise ShapeError(f"dupsample weight {weight.shape} incompatible with {c} channels and scale {s}")
    proj = np.einsum("oc,chw->ohw", weight, feature)
    return pixel_shuffle(proj, s)


def conv1x1(x, weight, bias=None):
    y = np.einsum("oc,chw->ohw", weight, x)
    if bias is not None:
        y = y + bias[:, None, None]
    return y


def fid_decode(features, params, mode="interpolation", activation=True):
    """Fuse the five-level pyramid ``(x0, ..., x4)`` into pixel embeddings.

    ``x0``/``x1`` are full resolution, ``x2``/``x3``/``x4`` are 1/2, 1/4,
    1/8. The upsampled levels are concatenated with ``x0``/``x1``, mixed by
    two 1x1 convolutions (ReLU in between unless ``activation`` is off).
    """
    if len(features) != 5:
        raise ShapeError("fid_decode needs five feature maps x0..x4")
    feats = [np.asarray(f, dtype=np.float64) for f in features]
    _, h, w = feats[0].shape
    for lvl, f in enumerate(feats):
        s = LEVEL_SCALE[lvl]
        if f.shape[1] * s != h or f.shape[2] * s != w:
            raise ShapeError(f"x{lvl} has spatial size {f.shape[1:]}, expected {(h // s, w // s)}")
    taps = []
    for lvl in UPSAMPLED:
        s = LEVEL_SCALE[lvl]
        if mode == "interpolation":
            taps.append(bilinear_upsample(feats[lvl], s))
        elif mode == "dupsampling":
            taps.append(dupsample(feats[lvl], require(params, f"pixel.up{lvl}.weight"), s))
        else:
            raise ConfigError(f"unknown upsampling mode {mode!r}")
    cat = np.concatenate([feats[0], feats[1], *taps], axis=0)
    emb = conv1x1(cat, require(params, "pixel.fuse.weight"), _opt(params, "pixel.fuse.bias"))
    if activation:
        emb = np.maximum(emb, 0.0)
    out = conv1x1(emb, require(params, "pixel.out.weight"), _opt(params, "pixel.out.bias"))
    return PixelEmbeddings(out, taps)


def _opt(params, name):
    return np.asarray(params[name], dtype=np.float64) if name in params else None


def aux_semantic_logits(tap, params, level):
    """Per-pixel class logits (H x W x K) from an intermediate tap."""
    w = require(params, f"pixel.aux{level}.weight")
    b = _opt(params, f"pixel.aux{level}.bias")
    return conv1x1(np.asarray(tap, dtype=np.float64), w, b).transpose(1, 2, 0)


def deep_b_logits(pixel, params):
    """One auxiliary logit map per upsampled tap."""
    return [aux_semantic_logits(t, params, lvl) for t, lvl in zip(pixel.taps, UPSAMPLED)]


def avg_pool(x, s):
    c, h, w = x.shape
    if h % s or w % s:
        raise ShapeError(f"spatial size {(h, w)} not divisible by {s}")
    return x.reshape(c, h // s, s, w // s, s).mean(axis=(2, 4))


def stem_features(tensor, params):
    """Stand-in for the backbone: per level, average-pool the (H, W, 5)
    input to that level's resolution and apply a 1x1 projection with
    LeakyReLU. Weights come from ``stem.x{level}.*``."""
    x = np.asarray(tensor, dtype=np.float64).transpose(2, 0, 1)
    feats = []
    for lvl in range(5):
        pooled = avg_pool(x, LEVEL_SCALE[lvl])
        y = conv1x1(pooled, require(params, f"stem.x{lvl}.weight"), _opt(params, f"stem.x{lvl}.bias"))
        feats.append(np.where(y > 0, y, 0.01 * y))
    return feats
