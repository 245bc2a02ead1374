"""SemanticKITTI scan/label files and class configuration documents."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .errors import (
    ConfigError,
    CorruptDataError,
    MalformedLabelError,
    MalformedScanError,
    PairingError,
)

SCAN_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")


@dataclass
class PointCloud:
    """One LiDAR scan.

    ``points`` is ``(N, 4)`` float32 with columns x, y, z (meters) and
    remission. ``semantic`` holds train ids (0 = ignore), ``instance`` holds
    instance ids (0 = none). Label arrays may be ``None`` for unlabeled scans.
    """

    points: np.ndarray
    semantic: np.ndarray | None = None
    instance: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 4)
        n = len(self.points)
        if self.semantic is not None:
            self.semantic = np.asarray(self.semantic, dtype=np.int64)
            if self.semantic.shape != (n,):
                raise PairingError(f"semantic labels have {self.semantic.shape[0]} entries, scan has {n} points")
        if self.instance is not None:
            self.instance = np.asarray(self.instance, dtype=np.int64)
            if self.instance.shape != (n,):
                raise PairingError(f"instance labels have {self.instance.shape[0]} entries, scan has {n} points")

    def __len__(self):
        return len(self.points)

    @property
    def xyz(self):
        return self.points[:, :3]

    @property
    def remission(self):
        return self.points[:, 3]

    @property
    def labeled(self):
        return self.semantic is not None and self.instance is not None

    def subset(self, keep):
        """Return the cloud restricted to a boolean mask or index array."""
        return PointCloud(
            self.points[keep],
            None if self.semantic is None else self.semantic[keep],
            None if self.instance is None else self.instance[keep],
        )

    @staticmethod
    def concatenate(clouds):
        clouds = list(clouds)
        labeled = all(c.labeled for c in clouds)
        pts = np.concatenate([c.points for c in clouds]) if clouds else np.zeros((0, 4), np.float32)
        if not labeled:
            return PointCloud(pts)
        return PointCloud(
            pts,
            np.concatenate([c.semantic for c in clouds]),
            np.concatenate([c.instance for c in clouds]),
        )


@dataclass
class PanopticResult:
    """Per-point semantic train id and instance id."""

    semantic: np.ndarray
    instance: np.ndarray

    def __post_init__(self):
        self.semantic = np.asarray(self.semantic, dtype=np.int64).reshape(-1)
        self.instance = np.asarray(self.instance, dtype=np.int64).reshape(-1)
        if self.semantic.shape != self.instance.shape:
            raise PairingError("semantic and instance arrays differ in length")

    def __len__(self):
        return len(self.semantic)


@dataclass
class ClassConfig:
    num_classes: int
    raw_to_train: dict
    train_to_raw: dict
    names: list
    is_thing: np.ndarray
    ignore_id: int = 0
    _lut: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.validate()
        max_raw = max(self.raw_to_train) if self.raw_to_train else 0
        lut = np.full(max(max_raw + 1, 1 << 16), self.ignore_id, dtype=np.int64)
        for raw, train in self.raw_to_train.items():
            lut[raw] = train
        self._lut = lut

    def validate(self):
        k = self.num_classes
        if k < 1:
            raise ConfigError("num_classes must be positive")
        if len(self.names) != k + 1:
            raise ConfigError(f"expected {k + 1} names (ignore + {k} classes), got {len(self.names)}")
        if len(self.is_thing) != k + 1:
            raise ConfigError("is_thing must be defined for every class id")
        for raw, train in self.raw_to_train.items():
            if not 0 <= raw < (1 << 16):
                raise ConfigError(f"raw id {raw} does not fit in 16 bits")
            if not 0 <= train <= k:
                raise ConfigError(f"raw id {raw} maps to train id {train} outside 0..{k}")
        for train in range(k + 1):
            if train not in self.train_to_raw:
                raise ConfigError(f"train id {train} has no inverse raw id")
            raw = self.train_to_raw[train]
            if self.raw_to_train.get(raw, self.ignore_id) != train:
                raise ConfigError(f"raw id {raw} for train id {train} does not map back to it")

    @property
    def class_ids(self):
        return list(range(1, self.num_classes + 1))

    @property
    def thing_ids(self):
        return [c for c in self.class_ids if self.is_thing[c]]

    @property
    def stuff_ids(self):
        return [c for c in self.class_ids if not self.is_thing[c]]

    def name_to_id(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"unknown class name {name!r}") from None

    def map_raw(self, raw):
        raw = np.asarray(raw, dtype=np.int64)
        return self._lut[raw]

    def map_train(self, train):
        train = np.asarray(train, dtype=np.int64)
        inv = np.array([self.train_to_raw[t] for t in range(self.num_classes + 1)], dtype=np.int64)
        bad = (train < 0) | (train > self.num_classes)
        if bad.any():
            raise ConfigError(f"train id {int(train[bad][0])} has no raw mapping")
        return inv[train]


def load_class_config(path=None):
    """Read a class configuration document; ``None`` loads the bundled
    SemanticKITTI configuration."""
    if path is None:
        text = resources.files("rangeseg.data").joinpath("semantic_kitti.yaml").read_text()
    else:
        with open(path) as f:
            text = f.read()
    doc = yaml.safe_load(text)
    return class_config_from_dict(doc)


def class_config_from_dict(doc):
    try:
        k = int(doc["num_classes"])
        ignore_id = int(doc.get("ignore_id", 0))
        entries = doc["classes"]
        raw_to_train = {int(r): int(t) for r, t in doc["raw_to_train"].items()}
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"class config missing or malformed field: {e}") from None

    names = [None] * (k + 1)
    is_thing = [None] * (k + 1)
    train_to_raw = {}
    names[ignore_id] = doc.get("ignore_name", "unlabeled")
    is_thing[ignore_id] = False
    train_to_raw[ignore_id] = int(doc.get("ignore_raw", 0))
    for entry in entries:
        try:
            cid = int(entry["id"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"class entry without id: {entry}") from None
        if not 1 <= cid <= k:
            raise ConfigError(f"class id {cid} outside 1..{k}")
        if names[cid] is not None:
            raise ConfigError(f"duplicate train id {cid}")
        if "thing" not in entry:
            raise ConfigError(f"class {cid} is missing its thing flag")
        if "raw" not in entry:
            raise ConfigError(f"class {cid} is missing its canonical raw id")
        names[cid] = str(entry.get("name", f"class{cid}"))
        is_thing[cid] = bool(entry["thing"])
        train_to_raw[cid] = int(entry["raw"])
    missing = [c for c in range(1, k + 1) if names[c] is None]
    if missing:
        raise ConfigError(f"no class entry for train ids {missing}")
    return ClassConfig(k, raw_to_train, train_to_raw, names, np.array(is_thing, dtype=bool), ignore_id)


def read_point_cloud(path):
    size = os.path.getsize(path)
    if size % 16:
        raise MalformedScanError(f"{path}: size {size} is not a multiple of 16 bytes")
    pts = np.fromfile(path, dtype=SCAN_DTYPE).reshape(-1, 4)
    finite = np.isfinite(pts).all(axis=1)
    if not finite.all():
        idx = int(np.flatnonzero(~finite)[0])
        raise CorruptDataError(f"{path}: non-finite value at point {idx}")
    return PointCloud(pts.astype(np.float32))


def write_point_cloud(path, cloud):
    np.ascontiguousarray(cloud.points, dtype=SCAN_DTYPE).tofile(path)


def read_labels(path, cfg):
    size = os.path.getsize(path)
    if size % 4:
        raise MalformedLabelError(f"{path}: size {size} is not a multiple of 4 bytes")
    words = np.fromfile(path, dtype=LABEL_DTYPE).astype(np.int64)
    return cfg.map_raw(words & 0xFFFF), words >> 16


def write_labels(path, result, cfg):
    inst = np.asarray(result.instance, dtype=np.int64)
    if len(inst) and (inst.min() < 0 or inst.max() > 0xFFFF):
        raise ConfigError("instance ids must fit in 16 bits")
    raw = cfg.map_train(result.semantic)
    words = (inst << 16) | raw
    words.astype(LABEL_DTYPE).tofile(path)


def read_labeled_cloud(scan_path, label_path, cfg):
    cloud = read_point_cloud(scan_path)
    sem, inst = read_labels(label_path, cfg)
    if len(sem) != len(cloud):
        raise PairingError(f"{label_path}: {len(sem)} labels for {len(cloud)} points in {scan_path}")
    return PointCloud(cloud.points, sem, inst)
