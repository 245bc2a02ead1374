"""Batch pipelines behind the CLI subcommands."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import head as H
from .class_stats import StatsAccumulator, accumulate_frame, finalize, long_tail_split
from .errors import DatasetError, EmptyDatasetError, FixtureError, PairingError
from .head.model import check_params
from .kitti_io import PanopticResult, read_labeled_cloud, read_labels, read_point_cloud, write_labels
from .metrics import (
    ConfusionAccumulator,
    PanopticAccumulator,
    accumulate_panoptic,
    accumulate_semantic,
    panoptic_report,
    semantic_report,
)
from .postprocess import knn_clean, temporal_smooth
from .projection import build_range_image, normalize, unproject_labels

log = logging.getLogger(__name__)


def _map(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _shards(items, n):
    n = max(1, min(n, len(items)))
    bounds = np.linspace(0, len(items), n + 1).astype(int)
    return [items[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def dataset_frames(root, sequences, require_labels=True):
    """``(scan, label)`` path pairs under ``root/sequences/NN/{velodyne,labels}``."""
    pairs = []
    for seq in sequences:
        seq_dir = Path(root) / "sequences" / seq
        scans = sorted((seq_dir / "velodyne").glob("*.bin"))
        if not scans:
            raise DatasetError(f"no scans in {seq_dir / 'velodyne'}")
        for scan in scans:
            label = seq_dir / "labels" / (scan.stem + ".label")
            if require_labels and not label.is_file():
                raise DatasetError(f"missing label file {label}")
            pairs.append((scan, label))
    return pairs


def accumulate_stats(pairs, classes, workers=1):
    """Scan labeled frames in ``workers`` contiguous shards and merge."""
    if not pairs:
        raise EmptyDatasetError("no frames to accumulate")

    def run(shard):
        acc = StatsAccumulator.empty(classes.num_classes)
        for scan, label in shard:
            acc = accumulate_frame(acc, read_labeled_cloud(scan, label, classes), classes)
        return acc

    accs = _map(run, _shards(list(pairs), workers), workers)
    total = accs[0]
    for a in accs[1:]:
        total = total.merge(a)
    return total


def compute_stats(pairs, classes, eps=1e-3, workers=1):
    return finalize(accumulate_stats(pairs, classes, workers), classes, eps)


STATS_COLUMNS = ("id", "name", "thing", "f", "alpha", "w_sem", "sem", "ins", "beta", "alpha_beta", "w_pan", "lt_sem", "lt_pan")


def stats_rows(stats, t=0.1):
    lt_s = long_tail_split(stats, t, "semantic")
    lt_p = long_tail_split(stats, t, "panoptic")
    rows = []
    for c in range(1, stats.num_classes + 1):
        rows.append(
            {
                "id": c,
                "name": stats.names[c],
                "thing": int(stats.is_thing[c]),
                "f": f"{stats.f[c]:.3e}",
                "alpha": f"{stats.alpha[c]:.2f}",
                "w_sem": f"{stats.w_sem[c]:.2f}",
                "sem": int(stats.sem[c]),
                "ins": int(stats.ins[c]),
                "beta": f"{stats.beta[c]:.2f}",
                "alpha_beta": f"{stats.alpha[c] * stats.beta[c]:.2f}",
                "w_pan": f"{stats.w_pan[c]:.2f}",
                "lt_sem": int(lt_s[c]),
                "lt_pan": int(lt_p[c]),
            }
        )
    return rows


def write_tsv(path, rows, columns):
    with open(path, "w") as fh:
        fh.write("\t".join(columns) + "\n")
        for r in rows:
            fh.write("\t".join("" if r.get(c) is None else str(r[c]) for c in columns) + "\n")


def format_table(rows, columns):
    cells = [[str(c) for c in columns]] + [["-" if r.get(c) is None else str(r[c]) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells)


# -- evaluation -------------------------------------------------------------


def pair_label_dirs(pred_dir, gt_dir):
    pred = {p.name: p for p in Path(pred_dir).glob("*.label")}
    gt = {p.name: p for p in Path(gt_dir).glob("*.label")}
    if not pred and not gt:
        raise PairingError(f"no .label files in {pred_dir} or {gt_dir}")
    missing = sorted(gt.keys() - pred.keys())
    extra = sorted(pred.keys() - gt.keys())
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing predictions: {', '.join(missing)}")
        if extra:
            parts.append(f"predictions without ground truth: {', '.join(extra)}")
        raise PairingError("; ".join(parts))
    return [(pred[n], gt[n]) for n in sorted(gt)]


def evaluate(pairs, classes, task, workers=1):
    """Accumulate over ``(pred, gt)`` label-file pairs; returns the report."""

    def load(path):
        sem, inst = read_labels(path, classes)
        return PanopticResult(sem, inst)

    def run(shard):
        if task == "semantic":
            acc = ConfusionAccumulator.empty(classes.num_classes, classes.ignore_id)
        else:
            acc = PanopticAccumulator.empty(classes.num_classes, classes.ignore_id)
        for p, g in shard:
            pr, gr = load(p), load(g)
            if len(pr) != len(gr):
                raise PairingError(f"{p.name}: {len(pr)} predicted labels vs {len(gr)} ground-truth labels")
            if task == "semantic":
                acc = accumulate_semantic(acc, pr.semantic, gr.semantic)
            else:
                acc = accumulate_panoptic(acc, pr, gr, classes)
        return acc

    accs = _map(run, _shards(list(pairs), workers), workers)
    acc = accs[0]
    for a in accs[1:]:
        acc = acc.merge(a)
    return semantic_report(acc, classes) if task == "semantic" else panoptic_report(acc, classes)


# -- inference ---------------------------------------------------------------


def _frame_forward(scan_path, cfg, params):
    cloud = read_point_cloud(scan_path)
    img = build_range_image(cloud, cfg.geometry, cfg.keep)
    tensor = normalize(img.data, cfg.mean, cfg.std)
    out = H.forward(tensor, params, cfg.head)
    return img, out.queries.class_logits, out.mask_logits


def _frame_labels(img, class_logits, mask_logits, cfg, classes):
    """Per-point (semantic, instance) for one frame."""
    if cfg.task == "semantic":
        range_map = H.semantic_inference(class_logits, mask_logits) + 1
        if cfg.knn_enabled:
            sem = knn_clean(range_map, img, cfg.knn)
        else:
            sem = unproject_labels(range_map, img)
        return sem, np.zeros_like(sem)

    is_thing = np.asarray(classes.is_thing[1:], dtype=bool)
    pan = H.panoptic_inference(class_logits, mask_logits, is_thing, cfg.object_threshold, cfg.overlap_threshold)
    seg_class = np.zeros(len(pan.segment_info) + 1, dtype=np.int64)
    seg_inst = np.zeros(len(pan.segment_info) + 1, dtype=np.int64)
    for s in pan.segment_info:
        seg_class[s["id"]] = s["category"] + 1
        seg_inst[s["id"]] = s["id"] if s["isthing"] else 0
    if cfg.knn_enabled:
        seg = knn_clean(pan.segments, img, cfg.knn)
    else:
        seg = unproject_labels(pan.segments, img)
    return seg_class[seg], seg_inst[seg]


def infer_merge(cfg, params, scan_paths, out_dir, classes):
    """Projection, head forward, optional temporal filter over the ordered
    frames, inference merge, back-projection/KNN and label writing.

    Returns the written label paths, in input order.
    """
    if cfg.head.num_classes != classes.num_classes:
        raise FixtureError(f"head predicts {cfg.head.num_classes} classes, class config has {classes.num_classes}")
    check_params(params, cfg.head)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scan_paths = [Path(p) for p in scan_paths]
    if not scan_paths:
        raise DatasetError("no scans given")

    frames = _map(lambda p: _frame_forward(p, cfg, params), scan_paths, cfg.workers)
    logits = [f[1] for f in frames]
    if cfg.temporal_k or cfg.temporal_l:
        logits = temporal_smooth(logits, cfg.temporal_k, cfg.temporal_l, cfg.temporal_space)

    def finish(i):
        img, _, masks = frames[i]
        sem, inst = _frame_labels(img, logits[i], masks, cfg, classes)
        path = out_dir / (scan_paths[i].stem + ".label")
        write_labels(path, PanopticResult(sem, inst), classes)
        return path

    return _map(finish, range(len(scan_paths)), cfg.workers)


def postprocess_dir(cfg, scan_paths, range_label_dir, out_dir, classes):
    """KNN-clean stored range-view label maps (``<stem>.npy``, H x W train
    ids) back onto their scans."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    missing = [p.name for p in map(Path, scan_paths) if not (Path(range_label_dir) / (p.stem + ".npy")).is_file()]
    if missing:
        raise PairingError(f"no range label map for: {', '.join(missing)}")

    def run(scan):
        scan = Path(scan)
        cloud = read_point_cloud(scan)
        img = build_range_image(cloud, cfg.geometry, cfg.keep)
        range_map = np.load(Path(range_label_dir) / (scan.stem + ".npy"))
        if cfg.knn_enabled:
            sem = knn_clean(range_map, img, cfg.knn)
        else:
            sem = unproject_labels(range_map, img)
        path = out_dir / (scan.stem + ".label")
        write_labels(path, PanopticResult(sem, np.zeros_like(sem)), classes)
        return path

    return _map(run, scan_paths, cfg.workers)
