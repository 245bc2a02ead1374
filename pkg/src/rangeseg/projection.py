"""Spherical projection of point clouds to range images and back."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegeneratePointError, ShapeError

log = logging.getLogger(__name__)

# Channel order of RangeImage.data.
CHANNELS = ("x", "y", "z", "rem", "r")


@dataclass(frozen=True)
class SensorGeometry:
    width: int = 2048
    height: int = 64
    fov_up: float = math.radians(3.0)
    fov_down: float = math.radians(25.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError("range image width and height must be >= 1")
        if not self.fov > 0:
            raise ConfigError("vertical field of view must be positive")

    @property
    def fov(self):
        return self.fov_up + self.fov_down

    @classmethod
    def from_degrees(cls, width=2048, height=64, fov_up=3.0, fov_down=25.0):
        return cls(int(width), int(height), math.radians(fov_up), math.radians(fov_down))


@dataclass(frozen=True)
class RangeImage:
    """``data`` is (H, W, 5) float32; ``pixel_to_point`` is (H, W) int64 with
    -1 for empty pixels; ``point_to_pixel`` is (N, 2) int64 columns (u, v) and
    ``point_range`` the (N,) range of every input point."""

    data: np.ndarray
    valid: np.ndarray
    pixel_to_point: np.ndarray
    point_to_pixel: np.ndarray
    point_range: np.ndarray
    geometry: SensorGeometry
    skipped: int = 0

    @property
    def shape(self):
        return self.valid.shape

    @property
    def range(self):
        return self.data[..., 4]


def project_point(p, geom):
    """Scalar projection of one point; returns (u, v, r)."""
    x, y, z = (float(c) for c in p[:3])
    r = math.sqrt(x * x + y * y + z * z)
    if r <= 0.0:
        raise DegeneratePointError(f"zero-range point {tuple(p[:3])}")
    u = math.floor(0.5 * (1.0 - math.atan2(y, x) / math.pi) * geom.width)
    v = math.floor((1.0 - (math.asin(z / r) + geom.fov_up) / geom.fov) * geom.height)
    u = min(max(u, 0), geom.width - 1)
    v = min(max(v, 0), geom.height - 1)
    return u, v, r


def project_points(xyz, geom):
    """Vectorized projection. Returns (u, v, r, ok) where ``ok`` flags points
    with nonzero range; u and v of degenerate points are 0."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    r = np.sqrt(np.sum(xyz * xyz, axis=1))
    ok = r > 0
    safe_r = np.where(ok, r, 1.0)
    yaw = np.arctan2(xyz[:, 1], xyz[:, 0])
    pitch = np.arcsin(np.clip(xyz[:, 2] / safe_r, -1.0, 1.0))
    u = np.floor(0.5 * (1.0 - yaw / np.pi) * geom.width)
    v = np.floor((1.0 - (pitch + geom.fov_up) / geom.fov) * geom.height)
    u = np.clip(u, 0, geom.width - 1).astype(np.int64)
    v = np.clip(v, 0, geom.height - 1).astype(np.int64)
    u[~ok] = 0
    v[~ok] = 0
    return u, v, r, ok


def build_range_image(cloud, geom, keep="nearest"):
    """Project ``cloud`` into an H x W x 5 image.

    On pixel collisions the nearest point is kept (``keep="nearest"``) or the
    first point in file order (``keep="first"``). Zero-range points are
    skipped and counted; they keep a (0, 0) pixel entry so every point still
    gets a label on back-projection.
    """
    h, w = geom.height, geom.width
    pts = np.asarray(cloud.points, dtype=np.float32).reshape(-1, 4)
    n = len(pts)
    u, v, r, ok = project_points(pts[:, :3], geom)
    skipped = int(n - ok.sum())
    if skipped:
        log.warning("skipped %d zero-range points", skipped)

    idx = np.flatnonzero(ok)
    pix = v[idx] * w + u[idx]
    if keep == "nearest":
        # per pixel: smallest range first, then lowest point index
        order = np.lexsort((idx, r[idx], pix))
    elif keep == "first":
        order = np.lexsort((idx, pix))
    else:
        raise ConfigError(f"unknown collision rule {keep!r}")
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    winners = idx[order[first]]

    pixel_to_point = np.full(h * w, -1, dtype=np.int64)
    pixel_to_point[pix_sorted[first]] = winners
    pixel_to_point = pixel_to_point.reshape(h, w)
    valid = pixel_to_point >= 0

    data = np.zeros((h, w, 5), dtype=np.float32)
    sel = pixel_to_point[valid]
    data[valid, :4] = pts[sel]
    data[valid, 4] = r[sel]
    return RangeImage(
        data=data,
        valid=valid,
        pixel_to_point=pixel_to_point,
        point_to_pixel=np.stack([u, v], axis=1),
        point_range=r,
        geometry=geom,
        skipped=skipped,
    )


def unproject_labels(labels, img):
    """Give every point the label of the pixel it projects to."""
    labels = np.asarray(labels)
    if labels.shape[:2] != img.shape:
        raise ShapeError(f"label map {labels.shape[:2]} does not match range image {img.shape}")
    u, v = img.point_to_pixel[:, 0], img.point_to_pixel[:, 1]
    return labels[v, u]


def normalize(data, mean, std):
    """Channel-wise standardization of a range image tensor; empty pixels stay 0."""
    data = np.asarray(data, dtype=np.float32)
    out = (data - np.asarray(mean, np.float32)) / np.asarray(std, np.float32)
    valid = np.any(data != 0, axis=-1)
    out[~valid] = 0.0
    return out
