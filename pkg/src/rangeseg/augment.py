"""Geometric augmentation and Weighted Paste Drop on raw point clouds.

All functions take an explicit ``numpy.random.Generator`` and draw from it
in a fixed order, so equal seeds give byte-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .class_stats import long_tail_split
from .errors import ConfigError
from .kitti_io import PointCloud


@dataclass
class AugmentParams:
    p_flip: float = 0.5
    rot_range: float = math.pi
    trans_range: float = 0.2
    p_point_drop: float = 0.05
    t: float = 0.1
    task: str = "semantic"
    seed: int = 0
    mode: str = "wpd"  # wpd | paste | drop | none
    drop_per_point: bool = False

    def __post_init__(self):
        for name in ("p_flip", "p_point_drop"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name}={p} is not a probability")
        if self.rot_range < 0 or self.trans_range < 0:
            raise ConfigError("rot_range and trans_range must be non-negative")
        if self.task not in ("semantic", "panoptic"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.mode not in ("wpd", "paste", "drop", "none"):
            raise ConfigError(f"unknown augmentation mode {self.mode!r}")


def common_augment(cloud, params, rng):
    """Random flip of y, yaw rotation, translation and per-point dropout."""
    pts = cloud.points.astype(np.float64, copy=True)
    flip = rng.random() < params.p_flip
    yaw = rng.uniform(-params.rot_range, params.rot_range)
    shift = rng.uniform(-params.trans_range, params.trans_range, size=3)
    keep = rng.random(len(pts)) >= params.p_point_drop

    if flip:
        pts[:, 1] = -pts[:, 1]
    c, s = math.cos(yaw), math.sin(yaw)
    x, y = pts[:, 0].copy(), pts[:, 1].copy()
    pts[:, 0] = c * x - s * y
    pts[:, 1] = s * x + c * y
    pts[:, :3] += shift
    out = PointCloud(pts.astype(np.float32), cloud.semantic, cloud.instance)
    return out.subset(keep)


def paste_probabilities(stats, t, task):
    """p_i = w_i - t on long-tail classes, 0 elsewhere."""
    w = stats.weights(task)
    flags = long_tail_split(stats, t, task)
    return np.where(flags, w - t, 0.0)


def drop_probabilities(stats, t, task):
    """d_i = t - w_i on non-long-tail classes, 0 on long-tail ones."""
    w = stats.weights(task)
    flags = long_tail_split(stats, t, task)
    d = np.where(flags, 0.0, t - w)
    d[0] = 0.0
    return np.clip(d, 0.0, 1.0)


def _paste_groups(cloud, cls, is_thing):
    """Point-index groups decided together: one per instance for thing
    classes, one per class for stuff."""
    idx = np.flatnonzero(cloud.semantic == cls)
    if not is_thing:
        return [idx]
    inst = cloud.instance[idx]
    return [idx[inst == i] for i in np.unique(inst)]


def weighted_paste(frame1, frame2, stats, params, rng, log=None):
    """Append long-tail objects of ``frame2`` to ``frame1``.

    Thing instances get fresh ids above every id in ``frame1``; stuff points
    keep instance 0. ``log``, if given, receives ``(class, pasted)`` for every
    draw.
    """
    if len(frame2) == 0:
        return frame1
    p = paste_probabilities(stats, params.t, params.task)
    next_id = int(frame1.instance.max()) + 1 if len(frame1) else 1
    pieces = [frame1]
    for cls in np.unique(frame2.semantic):
        if p[cls] <= 0.0:
            continue
        for group in _paste_groups(frame2, cls, stats.is_thing[cls]):
            pasted = rng.random() < p[cls]
            if log is not None:
                log.append((int(cls), bool(pasted)))
            if not pasted:
                continue
            piece = frame2.subset(group)
            if stats.is_thing[cls]:
                piece.instance = np.full(len(group), next_id, dtype=np.int64)
                next_id += 1
            else:
                piece.instance = np.zeros(len(group), dtype=np.int64)
            pieces.append(piece)
    if next_id - 1 > 0xFFFF:
        raise ConfigError("pasted instance ids overflow 16 bits")
    return PointCloud.concatenate(pieces)


def weighted_drop(frame, stats, params, rng, log=None):
    """Remove non-long-tail classes: all points of class i with probability
    d_i, or each point independently with ``params.drop_per_point``."""
    d = drop_probabilities(stats, params.t, params.task)
    keep = np.ones(len(frame), dtype=bool)
    for cls in np.unique(frame.semantic):
        if d[cls] <= 0.0:
            continue
        members = frame.semantic == cls
        if params.drop_per_point:
            drop = rng.random(int(members.sum())) < d[cls]
            sub = keep[members]
            sub[drop] = False
            keep[members] = sub
            if log is not None:
                log.append((int(cls), bool(drop.any())))
        else:
            dropped = rng.random() < d[cls]
            if log is not None:
                log.append((int(cls), bool(dropped)))
            if dropped:
                keep[members] = False
    return frame.subset(keep)


def wpd(frame1, frame2, stats, params, rng, paste_log=None, drop_log=None):
    """Common augmentation on both frames, then weighted paste and drop."""
    a = common_augment(frame1, params, rng)
    b = common_augment(frame2, params, rng)
    out = a
    if params.mode in ("wpd", "paste"):
        out = weighted_paste(out, b, stats, params, rng, paste_log)
    if params.mode in ("wpd", "drop"):
        out = weighted_drop(out, stats, params, rng, drop_log)
    return out
