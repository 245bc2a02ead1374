"""Central finite-difference checks for the loss kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .losses import (
    LossWeights,
    boundary_loss,
    classification_loss,
    cross_entropy,
    lovasz_softmax,
    maxpool2d,
    softmax,
    weighted_focal_loss,
)

STEP = 1e-5
TOLERANCE = 1e-4


def numeric_grad(fn, x, step=STEP):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * step)
    return g


def relative_error(analytic, numeric):
    """||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


@dataclass
class Instance:
    probs: np.ndarray  # H x W x K
    targets: np.ndarray  # H x W
    class_logits: np.ndarray  # Q x (K+1)
    class_targets: np.ndarray  # Q
    alpha: np.ndarray  # K
    beta: np.ndarray  # K


def random_instance(rng, max_hw=8, max_k=5):
    h = int(rng.integers(3, max_hw + 1))
    w = int(rng.integers(3, max_hw + 1))
    k = int(rng.integers(2, max_k + 1))
    probs = softmax(rng.normal(size=(h, w, k)))
    targets = rng.integers(0, k, size=(h, w))
    q = int(rng.integers(1, 7))
    class_logits = rng.normal(scale=2.0, size=(q, k + 1))
    class_targets = rng.integers(0, k + 1, size=q)
    alpha = rng.uniform(0.5, 50.0, size=k)
    beta = np.where(rng.random(k) < 0.5, 1.0, rng.uniform(1.0, 10.0, size=k))
    return Instance(probs, targets, class_logits, class_targets, alpha, beta)


def _min_gap(values):
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    return np.min(np.diff(v)) if v.size > 1 else np.inf


def _pool_gap(x, k):
    """Smallest gap between the largest and second-largest entry over all
    stride-1 windows whose maximum is positive."""
    r = k // 2
    padded = np.pad(x, r, constant_values=-np.inf)
    win = np.sort(sliding_window_view(padded, (k, k)).reshape(-1, k * k), axis=1)
    top, second = win[:, -1], win[:, -2]
    live = top > 0
    if not live.any():
        return np.inf
    return float(np.min(top[live] - second[live]))


def in_general_position(inst, theta=3, theta_ext=5, margin=1e-4):
    """True when no kink of the piecewise-linear losses lies within
    ``margin`` of the instance: Lovasz sort order and boundary max-pool
    winners are stable under perturbations smaller than the margin."""
    k = inst.probs.shape[-1]
    for c in np.unique(inst.targets):
        if c >= k:
            continue
        fg = (inst.targets == c).astype(np.float64)
        p = inst.probs[..., c]
        if _min_gap(np.abs(fg - p)) < margin:
            return False
        inv = 1.0 - p
        if _pool_gap(inv, theta) < margin:
            return False
        pb = maxpool2d(inv, theta)[0] - inv
        if _pool_gap(pb, theta_ext) < margin:
            return False
    return True


def random_smooth_instance(rng, **kw):
    while True:
        inst = random_instance(rng, **kw)
        if in_general_position(inst):
            return inst


def check_instance(inst, gamma=2.0, theta=3, sign_flip_focal=False):
    """Relative FD error for every loss kernel on one instance.

    Returns ``{name: error}``; focal appears once per balance strategy.
    """
    out = {}
    for strategy in ("N", "C", "U"):
        wts = LossWeights(gamma=gamma, alpha=inst.alpha, beta=inst.beta, strategy=strategy)
        _, g = weighted_focal_loss(inst.probs, inst.targets, wts)
        if sign_flip_focal:
            g = -g
        num = numeric_grad(lambda p: weighted_focal_loss(p, inst.targets, wts)[0], inst.probs)
        out[f"focal[{strategy}]"] = relative_error(g, num)

    _, g = classification_loss(inst.class_logits, inst.class_targets)
    num = numeric_grad(lambda z: classification_loss(z, inst.class_targets)[0], inst.class_logits)
    out["classification"] = relative_error(g, num)

    _, g = lovasz_softmax(inst.probs, inst.targets)
    num = numeric_grad(lambda p: lovasz_softmax(p, inst.targets)[0], inst.probs)
    out["lovasz"] = relative_error(g, num)

    _, g = boundary_loss(inst.probs, inst.targets, theta)
    num = numeric_grad(lambda p: boundary_loss(p, inst.targets, theta)[0], inst.probs)
    out["boundary"] = relative_error(g, num)
    return out


def focal_ce_gap(inst):
    """|focal(gamma=0, strategy N) - cross-entropy|."""
    wts = LossWeights(gamma=0.0, strategy="N")
    focal, _ = weighted_focal_loss(inst.probs, inst.targets, wts)
    return abs(focal - cross_entropy(inst.probs, inst.targets))
