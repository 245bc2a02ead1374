"""Bipartite matching between query predictions and ground-truth segments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .losses import LossWeights, binary_focal_cost, binary_lovasz_cost, sigmoid


@dataclass
class MaskTarget:
    class_id: int
    mask: np.ndarray
    is_thing: bool = False

    def __post_init__(self):
        self.mask = np.asarray(self.mask).astype(bool)
        if not self.mask.any():
            raise ConfigError("mask target has no positive pixel")


def matching_cost(class_probs, mask_logits, targets, weights=None):
    """Q x T cost: -p_q(class_t) + focal and Lovasz mask costs.

    ``class_probs`` is Q x (K+1); ``mask_logits`` is Q x H x W. Target class
    ids index the probability columns.
    """
    weights = weights or LossWeights()
    class_probs = np.asarray(class_probs, dtype=np.float64)
    mask_logits = np.asarray(mask_logits, dtype=np.float64)
    q = class_probs.shape[0]
    if mask_logits.shape[0] != q:
        raise ShapeError("class_probs and mask_logits disagree on the number of queries")
    if len(targets) > q:
        raise ConfigError(f"{len(targets)} targets cannot be matched to {q} queries")
    probs = sigmoid(mask_logits)
    cost = np.zeros((q, len(targets)))
    for j, tgt in enumerate(targets):
        if tgt.mask.shape != mask_logits.shape[1:]:
            raise ShapeError(f"target mask {tgt.mask.shape} vs logits {mask_logits.shape[1:]}")
        cost[:, j] -= weights.match_class * class_probs[:, tgt.class_id]
        for i in range(q):
            cost[i, j] += weights.match_focal * binary_focal_cost(probs[i], tgt.mask, weights.gamma)
            cost[i, j] += weights.match_lovasz * binary_lovasz_cost(probs[i], tgt.mask)
    if not np.isfinite(cost).all():
        raise NumericError("matching cost has non-finite entries")
    return cost


def _solve(a):
    """Shortest augmenting path with potentials on an n x m matrix, n <= m.
    Returns the column assigned to each row."""
    n, m = a.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row (1-based) owning column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assign = np.empty(n, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            assign[p[j] - 1] = j - 1
    return assign


def hungarian_match(cost):
    """Minimum-cost injection of targets (columns) into queries (rows).

    Returns ``(query, target)`` pairs sorted by target index.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeError("cost must be a matrix")
    q, t = cost.shape
    if t == 0:
        return []
    if not np.isfinite(cost).all():
        raise NumericError("cost matrix has non-finite entries")
    if t > q:
        raise ConfigError(f"{t} targets cannot be matched to {q} queries")
    rows_for_targets = _solve(cost.T)
    return [(int(rows_for_targets[j]), j) for j in range(t)]


def match_cost_total(cost, pairs):
    return sum(cost[i, j] for i, j in pairs)
