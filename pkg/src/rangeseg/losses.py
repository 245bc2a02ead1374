"""Loss kernels with analytic gradients w.r.t. their direct inputs.

Per-pixel losses take class probabilities shaped ``(..., K)`` (class axis
last) and integer targets shaped ``(...)``. Each returns ``(loss, grad)``
where ``grad`` has the shape of the differentiated input.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, NumericError, ShapeError

log = logging.getLogger(__name__)

P_FLOOR = 1e-12
BF1_EPS = 1e-7


@dataclass
class LossWeights:
    """Loss coefficients and class re-balance settings.

    ``alpha``/``beta`` are indexed like the probability columns. Strategy
    ``N`` ignores both, ``C`` uses alpha only, ``U`` uses alpha * beta.
    """

    cls: float = 1.0
    focal: float = 1.0
    lovasz: float = 1.0
    boundary: float = 1.0
    gamma: float = 2.0
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None
    strategy: str = "U"
    no_object_weight: float = 0.1
    match_class: float = 1.0
    match_focal: float = 1.0
    match_lovasz: float = 1.0

    def __post_init__(self):
        if min(self.cls, self.focal, self.lovasz, self.boundary) < 0:
            raise ConfigError("loss coefficients must be non-negative")
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        if self.strategy not in ("N", "C", "U"):
            raise ConfigError(f"unknown balance strategy {self.strategy!r}")

    def class_weights(self, num_columns):
        """Per-column focal weights alpha_i * beta_i under the strategy."""
        w = np.ones(num_columns)
        if self.strategy in ("C", "U") and self.alpha is not None:
            w = w * np.asarray(self.alpha, dtype=np.float64)[:num_columns]
        if self.strategy == "U" and self.beta is not None:
            w = w * np.asarray(self.beta, dtype=np.float64)[:num_columns]
        return w


def _flatten(probs, targets, ignore_index):
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets)
    if probs.shape[:-1] != targets.shape:
        raise ShapeError(f"probs {probs.shape} and targets {targets.shape} disagree")
    k = probs.shape[-1]
    p = probs.reshape(-1, k)
    t = targets.reshape(-1).astype(np.int64)
    valid = np.ones(len(t), dtype=bool) if ignore_index is None else t != ignore_index
    return p, t, valid


def weighted_focal_loss(probs, targets, weights=None, ignore_index=None):
    """Mean over valid pixels of ``-w_i (1 - p_t)^gamma log p_t``."""
    weights = weights or LossWeights()
    p, t, valid = _flatten(probs, targets, ignore_index)
    grad = np.zeros_like(p)
    n = int(valid.sum())
    if n == 0:
        return 0.0, grad.reshape(np.shape(probs))
    rows = np.flatnonzero(valid)
    cols = t[rows]
    pt = p[rows, cols]
    if np.any(pt <= 0):
        log.warning("target probability 0 at %d pixels, clamped to %g", int((pt <= 0).sum()), P_FLOOR)
    pt = np.maximum(pt, P_FLOOR)
    w = weights.class_weights(p.shape[1])[cols]
    g = weights.gamma
    one_m = 1.0 - pt
    logp = np.log(pt)
    loss = np.sum(-w * one_m**g * logp) / n
    if g == 0:
        d = -w / pt
    else:
        d = w * (g * one_m ** (g - 1) * logp - one_m**g / pt)
    grad[rows, cols] = d / n
    return float(loss), grad.reshape(np.shape(probs))


def cross_entropy(probs, targets, ignore_index=None):
    p, t, valid = _flatten(probs, targets, ignore_index)
    rows = np.flatnonzero(valid)
    if len(rows) == 0:
        return 0.0
    return float(np.mean(-np.log(np.maximum(p[rows, t[rows]], P_FLOOR))))


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def classification_loss(class_logits, targets, no_object_weight=0.1):
    """Weighted cross-entropy over queries.

    ``targets[q]`` is a real class column, or ``K`` (the last column) for
    unmatched queries; those terms are weighted by ``no_object_weight`` and
    the sum is normalized by the total weight. Gradient is w.r.t. the logits.
    """
    z = np.asarray(class_logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    q, kp1 = z.shape
    if t.shape != (q,):
        raise ShapeError(f"expected {q} targets, got {t.shape}")
    w = np.where(t == kp1 - 1, no_object_weight, 1.0)
    prob = softmax(z)
    zmax = z.max(axis=1)
    lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
    ce = lse - z[np.arange(q), t]
    total = w.sum()
    loss = float(np.sum(w * ce) / total)
    onehot = np.zeros_like(z)
    onehot[np.arange(q), t] = 1.0
    grad = w[:, None] * (prob - onehot) / total
    return loss, grad


def lovasz_grad(gt_sorted):
    """Gradient of the Lovasz extension of the Jaccard loss w.r.t. sorted errors."""
    gt_sorted = np.asarray(gt_sorted, dtype=np.float64)
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    if len(gt_sorted) > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def _lovasz_binary(prob, fg):
    """Lovasz-extension Jaccard loss for one class and its gradient w.r.t. prob."""
    err = np.abs(fg - prob)
    perm = np.argsort(-err, kind="stable")
    g = lovasz_grad(fg[perm])
    loss = float(np.dot(err[perm], g))
    grad = np.zeros_like(prob)
    grad[perm] = g * np.sign(prob[perm] - fg[perm])
    return loss, grad


def lovasz_softmax(probs, targets, ignore_index=None):
    """Lovasz-Softmax averaged over classes present in the targets."""
    p, t, valid = _flatten(probs, targets, ignore_index)
    grad = np.zeros_like(p)
    rows = np.flatnonzero(valid)
    present = [c for c in np.unique(t[rows]) if 0 <= c < p.shape[1]]
    if not present:
        return 0.0, grad.reshape(np.shape(probs))
    total = 0.0
    for c in present:
        fg = (t[rows] == c).astype(np.float64)
        loss_c, g_c = _lovasz_binary(p[rows, c], fg)
        total += loss_c
        grad[rows, c] += g_c
    n = len(present)
    return total / n, (grad / n).reshape(np.shape(probs))


def maxpool2d(x, k):
    """Stride-1 'same' max pooling with -inf padding.

    Returns the pooled map and, per output pixel, the flat index of the input
    element that won (first in row-major window order on ties).
    """
    if k % 2 != 1 or k < 1:
        raise ConfigError(f"pool size must be odd, got {k}")
    h, w = x.shape
    r = k // 2
    padded = np.pad(x, r, mode="constant", constant_values=-np.inf)
    win = sliding_window_view(padded, (k, k)).reshape(h, w, k * k)
    arg = win.argmax(axis=2)
    out = np.take_along_axis(win, arg[..., None], axis=2)[..., 0]
    rows = np.arange(h)[:, None] + arg // k - r
    cols = np.arange(w)[None, :] + arg % k - r
    return out, rows * w + cols


def _pool_backward(grad_out, argidx, shape):
    g = np.zeros(int(np.prod(shape)))
    np.add.at(g, argidx.ravel(), grad_out.ravel())
    return g.reshape(shape)


def boundary_maps(mask, theta):
    """``maxpool(1 - m, theta) - (1 - m)``: positive on the inner rim of ``m``."""
    inv = 1.0 - np.asarray(mask, dtype=np.float64)
    pooled, _ = maxpool2d(inv, theta)
    return pooled - inv


def _boundary_class(pred, gt, valid, theta, theta_ext):
    inv = 1.0 - pred
    pooled, arg0 = maxpool2d(inv, theta)
    pb = pooled - inv
    pe, arg1 = maxpool2d(pb, theta_ext)
    gb = boundary_maps(gt, theta)
    ge, _ = maxpool2d(gb, theta_ext)
    pb, pe, gb = pb * valid, pe * valid, gb * valid

    spb, sgb = pb.sum(), gb.sum()
    if spb == 0 and sgb == 0:
        return 0.0, np.zeros_like(pred)
    denp = spb + BF1_EPS
    denr = sgb + BF1_EPS
    P = np.sum(pb * ge) / denp
    R = np.sum(pe * gb) / denr
    D = P + R + BF1_EPS
    bf1 = 2 * P * R / D
    dP = 2 * R * (R + BF1_EPS) / D**2
    dR = 2 * P * (P + BF1_EPS) / D**2
    # loss = 1 - bf1
    g_pb = -dP * (ge - P) / denp * valid
    g_pe = -dR * gb / denr * valid
    g_pb = g_pb + _pool_backward(g_pe, arg1, pb.shape)
    g_inv = _pool_backward(g_pb, arg0, inv.shape) - g_pb
    return float(1.0 - bf1), -g_inv


def boundary_loss(probs, targets, theta=3, theta_ext=5, ignore_index=None):
    """1 - boundary F1, averaged over classes present in the targets.

    ``probs`` is (H, W, K), ``targets`` is (H, W). Ignored pixels do not
    contribute boundary evidence. When both boundary maps of a class are
    empty its F1 is taken as 1.
    """
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets)
    if probs.ndim != 3 or probs.shape[:2] != targets.shape:
        raise ShapeError(f"boundary loss needs (H, W, K) probs and (H, W) targets, got {probs.shape}, {targets.shape}")
    if theta < 3 or theta % 2 == 0:
        raise ConfigError(f"theta must be odd and >= 3, got {theta}")
    valid = np.ones(targets.shape) if ignore_index is None else (targets != ignore_index).astype(np.float64)
    present = [c for c in np.unique(targets[valid > 0]) if 0 <= c < probs.shape[2]]
    grad = np.zeros_like(probs)
    if not present:
        return 0.0, grad
    total = 0.0
    for c in present:
        loss_c, g_c = _boundary_class(probs[..., c], (targets == c).astype(np.float64), valid, theta, theta_ext)
        total += loss_c
        grad[..., c] = g_c
    n = len(present)
    return total / n, grad / n


def total_loss(components, weights=None, aux=()):
    """Weighted sum ``cls*L_cls + focal*L_focal + lovasz*L_ls + boundary*L_bd``.

    ``components`` maps those four names to values (missing ones count as 0);
    each entry of ``aux`` is another such mapping added with the same weights.
    """
    weights = weights or LossWeights()
    coef = {"cls": weights.cls, "focal": weights.focal, "lovasz": weights.lovasz, "boundary": weights.boundary}
    total = 0.0
    for tag, comp in [("main", components), *((f"aux{i}", c) for i, c in enumerate(aux))]:
        for name, value in comp.items():
            if name not in coef:
                raise ConfigError(f"unknown loss component {name!r}")
            value = float(value)
            if not math.isfinite(value):
                raise NumericError(f"loss component {name} ({tag}) is not finite: {value}")
            total += coef[name] * value
    return total


def binary_focal_cost(mask_probs, target_mask, gamma=2.0):
    """Mean binary focal loss of one soft mask against a binary target."""
    s = np.clip(np.asarray(mask_probs, dtype=np.float64).ravel(), P_FLOOR, 1 - P_FLOOR)
    m = np.asarray(target_mask, dtype=np.float64).ravel()
    pos = -m * (1 - s) ** gamma * np.log(s)
    neg = -(1 - m) * s**gamma * np.log(1 - s)
    return float(np.mean(pos + neg))


def binary_lovasz_cost(mask_probs, target_mask):
    s = np.asarray(mask_probs, dtype=np.float64).ravel()
    m = np.asarray(target_mask, dtype=np.float64).ravel()
    return _lovasz_binary(s, m)[0]
