"""Class frequencies, segment/instance counts and re-balance weights."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

from .errors import ConfigError, EmptyDatasetError

DEFAULT_EPS = 1e-3
DEFAULT_THRESHOLD = 0.1


@dataclass
class StatsAccumulator:
    """Mergeable per-class counters. Index 0 is the ignore class."""

    points: np.ndarray
    sem: np.ndarray
    ins: np.ndarray
    frames: int = 0

    @classmethod
    def empty(cls, num_classes):
        z = lambda: np.zeros(num_classes + 1, dtype=np.int64)  # noqa: E731
        return cls(z(), z(), z(), 0)

    def merge(self, other):
        return StatsAccumulator(
            self.points + other.points,
            self.sem + other.sem,
            self.ins + other.ins,
            self.frames + other.frames,
        )

    def __eq__(self, other):
        return (
            isinstance(other, StatsAccumulator)
            and self.frames == other.frames
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.sem, other.sem)
            and np.array_equal(self.ins, other.ins)
        )


def accumulate_frame(acc, cloud, cfg):
    sem = cloud.semantic
    inst = cloud.instance
    k = cfg.num_classes
    keep = sem != cfg.ignore_id
    sem = sem[keep]
    inst = inst[keep]
    points = acc.points + np.bincount(sem, minlength=k + 1)
    present = np.zeros(k + 1, dtype=np.int64)
    present[np.unique(sem)] = 1
    ins_counts = present.copy()
    for c in np.unique(sem):
        if cfg.is_thing[c]:
            ins_counts[c] = len(np.unique(inst[sem == c]))
    return StatsAccumulator(points, acc.sem + present, acc.ins + ins_counts, acc.frames + 1)


@dataclass
class ClassStats:
    """Per-class statistics; every array is indexed by train id (entry 0 is
    the ignore class and carries zeros)."""

    names: list
    is_thing: np.ndarray
    f: np.ndarray
    sem: np.ndarray
    ins: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    w_sem: np.ndarray
    w_pan: np.ndarray
    eps: float = DEFAULT_EPS

    @property
    def num_classes(self):
        return len(self.f) - 1

    def weights(self, task):
        if task == "semantic":
            return self.w_sem
        if task == "panoptic":
            return self.w_pan
        raise ConfigError(f"unknown task {task!r}")

    def to_dict(self):
        classes = []
        for c in range(1, self.num_classes + 1):
            classes.append(
                {
                    "id": c,
                    "name": self.names[c],
                    "thing": bool(self.is_thing[c]),
                    "f": float(self.f[c]),
                    "sem": int(self.sem[c]),
                    "ins": int(self.ins[c]),
                    "alpha": float(self.alpha[c]),
                    "beta": float(self.beta[c]),
                    "w_sem": float(self.w_sem[c]),
                    "w_pan": float(self.w_pan[c]),
                }
            )
        return {"eps": self.eps, "classes": classes}

    @classmethod
    def from_dict(cls, doc, cfg):
        k = cfg.num_classes
        f = np.zeros(k + 1)
        sem = np.zeros(k + 1, dtype=np.int64)
        ins = np.zeros(k + 1, dtype=np.int64)
        seen = set()
        for entry in doc["classes"]:
            c = int(entry["id"]) if "id" in entry else cfg.name_to_id(entry["name"])
            f[c], sem[c], ins[c] = float(entry["f"]), int(entry["sem"]), int(entry["ins"])
            seen.add(c)
        if seen != set(range(1, k + 1)):
            raise ConfigError(f"stats document covers classes {sorted(seen)}, expected 1..{k}")
        return stats_from_counts(f, sem, ins, cfg, float(doc.get("eps", DEFAULT_EPS)))

    def save(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def load(cls, path, cfg):
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh), cfg)


def stats_from_counts(f, sem, ins, cfg, eps=DEFAULT_EPS):
    """Derive re-balance factors and normalized weights from per-class
    proportions and counts (arrays indexed by train id)."""
    k = cfg.num_classes
    f = np.asarray(f, dtype=np.float64)
    sem = np.asarray(sem, dtype=np.int64)
    ins = np.asarray(ins, dtype=np.int64)
    cls_ids = np.arange(1, k + 1)

    alpha = np.zeros(k + 1)
    alpha[cls_ids] = 1.0 / (f[cls_ids] + eps)
    beta = np.ones(k + 1)
    thing = np.asarray(cfg.is_thing, dtype=bool)
    counted = thing & (sem > 0)
    beta[counted] = ins[counted] / sem[counted]
    beta[0] = 0.0

    w_sem = np.zeros(k + 1)
    w_sem[cls_ids] = alpha[cls_ids] / alpha[cls_ids].max()
    ab = alpha * beta
    w_pan = np.zeros(k + 1)
    w_pan[cls_ids] = ab[cls_ids] / ab[cls_ids].max()
    return ClassStats(list(cfg.names), thing.copy(), f, sem, ins, alpha, beta, w_sem, w_pan, eps)


def finalize(acc, cfg, eps=DEFAULT_EPS):
    labeled = acc.points[1:].sum()
    if labeled <= 0:
        raise EmptyDatasetError("no labeled points accumulated")
    f = acc.points.astype(np.float64) / labeled
    f[0] = 0.0
    return stats_from_counts(f, acc.sem, acc.ins, cfg, eps)


def published_stats(cfg, eps=DEFAULT_EPS):
    """Stats built from the bundled SemanticKITTI training-split table."""
    text = resources.files("rangeseg.data").joinpath("published_stats.yaml").read_text()
    doc = yaml.safe_load(text)
    entries = [{"name": name, **vals} for name, vals in doc["classes"].items()]
    return ClassStats.from_dict({"eps": eps, "classes": entries}, cfg)


def long_tail_split(stats, t=DEFAULT_THRESHOLD, task="semantic"):
    """Boolean flags (indexed by train id) for classes whose normalized
    weight strictly exceeds ``t``."""
    flags = stats.weights(task) > t
    flags[0] = False
    return flags
