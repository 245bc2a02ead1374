"""Pipeline configuration document (YAML) with flag overrides."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .augment import AugmentParams
from .errors import ConfigError
from .head import DecoderConfig, HeadConfig
from .kitti_io import load_class_config
from .losses import LossWeights
from .postprocess import KnnParams
from .projection import SensorGeometry

DATASET_ENV = "RANGESEG_DATASET_ROOT"

# Channel statistics (x, y, z, rem, r) commonly used for SemanticKITTI.
DEFAULT_MEAN = [10.88, 0.23, -1.04, 0.21, 12.12]
DEFAULT_STD = [11.47, 6.91, 0.86, 0.16, 12.32]

TRAIN_SEQUENCES = ["00", "01", "02", "03", "04", "05", "06", "07", "09", "10"]


@dataclass
class PipelineConfig:
    dataset_root: Path | None = None
    train_sequences: list = field(default_factory=lambda: list(TRAIN_SEQUENCES))
    eval_sequences: list = field(default_factory=lambda: ["08"])
    class_config: Path | None = None
    geometry: SensorGeometry = field(default_factory=SensorGeometry)
    keep: str = "nearest"
    augment: AugmentParams = field(default_factory=AugmentParams)
    loss: LossWeights = field(default_factory=LossWeights)
    knn: KnnParams = field(default_factory=KnnParams)
    knn_enabled: bool = True
    temporal_k: int = 0
    temporal_l: int = 0
    temporal_space: str = "logits"
    head: HeadConfig = field(default_factory=HeadConfig)
    task: str = "semantic"
    object_threshold: float = 0.8
    overlap_threshold: float = 0.8
    mean: list = field(default_factory=lambda: list(DEFAULT_MEAN))
    std: list = field(default_factory=lambda: list(DEFAULT_STD))
    stats_file: Path | None = None
    eps: float = 1e-3
    output_dir: Path = Path("out")
    seed: int = 0
    workers: int = 1

    def classes(self):
        return load_class_config(self.class_config)


def _section(doc, name):
    sec = doc.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return sec


def _build(cls, values, name, **conv):
    try:
        return cls(**{k: conv.get(k, lambda x: x)(v) for k, v in values.items()})
    except TypeError as e:
        raise ConfigError(f"bad field in section {name!r}: {e}") from None


def load_config(path=None, **overrides):
    """Read a config document; keyword overrides (flags) win over the file.

    Angles are given in degrees in the document.
    """
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = yaml.safe_load(fh) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"config {path} is not valid YAML: {e}") from None
    base = Path(path).parent if path else Path(".")

    def rel(p):
        return None if p is None else (base / p if not os.path.isabs(str(p)) else Path(p))

    ds = _section(doc, "dataset")
    geo = _section(doc, "geometry")
    aug = dict(_section(doc, "augment"))
    if "rot_range_deg" in aug:
        aug["rot_range"] = math.radians(aug.pop("rot_range_deg"))
    knn = dict(_section(doc, "knn"))
    knn_enabled = bool(knn.pop("enabled", True))
    temporal = _section(doc, "temporal")
    head = dict(_section(doc, "head"))
    dec = _build(DecoderConfig, _section(head, "decoder"), "head.decoder")
    head.pop("decoder", None)
    inf = _section(doc, "inference")

    cfg = PipelineConfig(
        dataset_root=rel(ds.get("root")),
        train_sequences=[str(s).zfill(2) for s in ds.get("train_sequences", TRAIN_SEQUENCES)],
        eval_sequences=[str(s).zfill(2) for s in ds.get("eval_sequences", ["08"])],
        class_config=rel(doc.get("class_config")),
        geometry=SensorGeometry.from_degrees(
            geo.get("width", 2048), geo.get("height", 64), geo.get("fov_up_deg", 3.0), geo.get("fov_down_deg", 25.0)
        ),
        keep=geo.get("keep", "nearest"),
        augment=_build(AugmentParams, aug, "augment"),
        loss=_build(LossWeights, _section(doc, "loss"), "loss"),
        knn=_build(KnnParams, knn, "knn"),
        knn_enabled=knn_enabled,
        temporal_k=int(temporal.get("k_prev", 0)),
        temporal_l=int(temporal.get("l_next", 0)),
        temporal_space=temporal.get("space", "logits"),
        head=_build(HeadConfig, {**head, "decoder": dec}, "head"),
        task=inf.get("task", "semantic"),
        object_threshold=float(inf.get("object_threshold", 0.8)),
        overlap_threshold=float(inf.get("overlap_threshold", 0.8)),
        mean=list(inf.get("mean", DEFAULT_MEAN)),
        std=list(inf.get("std", DEFAULT_STD)),
        stats_file=rel(doc.get("stats_file")),
        eps=float(doc.get("eps", 1e-3)),
        output_dir=rel(doc.get("output_dir", "out")),
        seed=int(doc.get("seed", 0)),
        workers=int(doc.get("workers", 1)),
    )
    env_root = os.environ.get(DATASET_ENV)
    if env_root:
        cfg.dataset_root = Path(env_root)
    apply_overrides(cfg, **overrides)
    validate(cfg)
    return cfg


def apply_overrides(cfg, **overrides):
    for key, value in overrides.items():
        if value is None:
            continue
        if key.startswith("knn_") and key != "knn_enabled":
            cfg.knn = replace(cfg.knn, **{key[4:]: value})
        elif key.startswith("augment_"):
            cfg.augment = replace(cfg.augment, **{key[8:]: value})
        elif hasattr(cfg, key):
            setattr(cfg, key, value)
        else:
            raise ConfigError(f"unknown override {key!r}")


def validate(cfg):
    if cfg.dataset_root is not None and not Path(cfg.dataset_root).is_dir():
        raise ConfigError(f"dataset root {cfg.dataset_root} does not exist")
    if cfg.class_config is not None and not Path(cfg.class_config).is_file():
        raise ConfigError(f"class config {cfg.class_config} does not exist")
    if cfg.task not in ("semantic", "panoptic"):
        raise ConfigError(f"unknown task {cfg.task!r}")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.temporal_k < 0 or cfg.temporal_l < 0:
        raise ConfigError("temporal window sizes must be non-negative")
    if len(cfg.mean) != 5 or len(cfg.std) != 5:
        raise ConfigError("normalization mean/std need five entries (x, y, z, rem, r)")
