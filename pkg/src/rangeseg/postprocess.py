"""KNN label cleaning on the range image and temporal filtering of query
class logits."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError, StateError
from .losses import softmax


@dataclass(frozen=True)
class KnnParams:
    k: int = 5
    window: int = 5
    sigma: float = 1.0
    cutoff: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("knn k must be >= 1")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError("knn window must be odd and >= 1")
        if self.cutoff <= 0 or self.sigma <= 0:
            raise ConfigError("knn cutoff and sigma must be positive")


def knn_clean(range_labels, img, params=None):
    """Re-vote every point's label from nearby pixels of similar range.

    Candidates are valid pixels in the ``window`` x ``window`` neighborhood
    of the point's pixel (clipped at the image border) whose range differs by
    at most ``cutoff``. The ``k`` closest in range vote with weight
    ``exp(-dr^2 / (2 sigma^2))``; ties in range keep window scan order and
    vote ties go to the lowest label. Points without candidates keep their
    back-projected label.
    """
    params = params or KnnParams()
    labels = np.asarray(range_labels)
    if labels.shape != img.shape:
        raise ShapeError(f"label map {labels.shape} does not match range image {img.shape}")
    u = img.point_to_pixel[:, 0]
    v = img.point_to_pixel[:, 1]
    fallback = labels[v, u].astype(np.int64)
    n = len(u)
    if n == 0:
        return fallback

    r = params.window // 2
    rng_img = np.where(img.valid, img.range.astype(np.float64), np.nan)
    pad_r = np.pad(rng_img, r, constant_values=np.nan)
    pad_l = np.pad(labels.astype(np.int64), r, constant_values=-1)
    win_r = sliding_window_view(pad_r, (params.window, params.window)).reshape(*img.shape, -1)
    win_l = sliding_window_view(pad_l, (params.window, params.window)).reshape(*img.shape, -1)

    cand_r = win_r[v, u]  # N x w*w
    cand_l = win_l[v, u]
    dr = np.abs(cand_r - img.point_range[:, None])
    ok = np.isfinite(dr) & (dr <= params.cutoff)
    dr = np.where(ok, dr, np.inf)

    k = min(params.k, dr.shape[1])
    order = np.argsort(dr, axis=1, kind="stable")[:, :k]
    top_dr = np.take_along_axis(dr, order, axis=1)
    top_l = np.take_along_axis(cand_l, order, axis=1)
    use = np.isfinite(top_dr)
    weight = np.where(use, np.exp(-(np.where(use, top_dr, 0.0) ** 2) / (2 * params.sigma**2)), 0.0)

    num_labels = int(max(labels.max(), fallback.max())) + 1
    votes = np.zeros((n, num_labels))
    rows = np.repeat(np.arange(n), k)
    lab = np.where(use, top_l, 0).ravel()
    np.add.at(votes, (rows, lab), weight.ravel())
    out = votes.argmax(axis=1)
    has = use.any(axis=1)
    return np.where(has, out, fallback)


class TemporalWindow:
    """Sliding buffer of per-frame Q x (K+1) class logits.

    ``k_prev`` past and ``l_next`` future frames around the filtered frame.
    """

    def __init__(self, k_prev=0, l_next=0, space="logits"):
        if k_prev < 0 or l_next < 0:
            raise ConfigError("temporal window sizes must be non-negative")
        if space not in ("logits", "probs"):
            raise ConfigError(f"unknown averaging space {space!r}")
        self.k_prev = k_prev
        self.l_next = l_next
        self.space = space
        self.buffer = deque(maxlen=k_prev + l_next + 1)

    @property
    def size(self):
        return self.k_prev + self.l_next + 1

    def push(self, class_logits):
        self.buffer.append(np.asarray(class_logits, dtype=np.float64))

    def __len__(self):
        return len(self.buffer)


def temporal_filter(window):
    """Mean of the buffered class logits (or of their softmax, returned as
    log-probabilities, when ``window.space == "probs"``)."""
    if not window.buffer:
        raise StateError("temporal window is empty")
    stack = np.stack(list(window.buffer))
    if window.space == "probs":
        return np.log(np.maximum(softmax(stack).mean(axis=0), 1e-300))
    return stack.mean(axis=0)


def temporal_smooth(sequence, k_prev=0, l_next=0, space="logits"):
    """Filter a whole sequence; frame t averages frames t-K..t+L clipped to
    the sequence bounds."""
    sequence = list(sequence)
    out = []
    for t in range(len(sequence)):
        win = TemporalWindow(k_prev, l_next, space)
        for s in range(max(0, t - k_prev), min(len(sequence), t + l_next + 1)):
            win.push(sequence[s])
        out.append(temporal_filter(win))
    return out
