"""mIoU and panoptic quality with mergeable accumulators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class ConfusionAccumulator:
    """K+1 x K+1 counts, row = ground truth, column = prediction. Row and
    column ``ignore_id`` exist but ground-truth-ignore points are never added."""

    matrix: np.ndarray
    ignore_id: int = 0

    @classmethod
    def empty(cls, num_classes, ignore_id=0):
        return cls(np.zeros((num_classes + 1, num_classes + 1), dtype=np.int64), ignore_id)

    def merge(self, other):
        return ConfusionAccumulator(self.matrix + other.matrix, self.ignore_id)


def accumulate_semantic(acc, pred, gt):
    pred = np.asarray(pred, dtype=np.int64).ravel()
    gt = np.asarray(gt, dtype=np.int64).ravel()
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction has {pred.size} points, ground truth {gt.size}")
    keep = gt != acc.ignore_id
    n = acc.matrix.shape[0]
    flat = np.bincount(gt[keep] * n + pred[keep], minlength=n * n).reshape(n, n)
    return ConfusionAccumulator(acc.matrix + flat, acc.ignore_id)


def miou(acc):
    """Per-class IoU (NaN where undefined) over non-ignore classes and their
    mean over defined entries (NaN if none).

    Predictions of the ignore class on labeled points count as false
    negatives only.
    """
    conf = acc.matrix.astype(np.float64)
    cls = np.array([c for c in range(conf.shape[0]) if c != acc.ignore_id])
    tp = np.diag(conf)[cls]
    fp = conf[:, cls].sum(axis=0) - tp
    fn = conf[cls, :].sum(axis=1) - tp
    denom = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(denom > 0, tp / denom, np.nan)
    mean = float(np.nanmean(iou)) if np.any(denom > 0) else float("nan")
    return iou, mean


@dataclass
class PanopticAccumulator:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    iou_sum: np.ndarray
    confusion: ConfusionAccumulator

    @classmethod
    def empty(cls, num_classes, ignore_id=0):
        z = lambda dt: np.zeros(num_classes + 1, dtype=dt)  # noqa: E731
        return cls(z(np.int64), z(np.int64), z(np.int64), z(np.float64), ConfusionAccumulator.empty(num_classes, ignore_id))

    @property
    def ignore_id(self):
        return self.confusion.ignore_id

    def merge(self, other):
        return PanopticAccumulator(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.iou_sum + other.iou_sum,
            self.confusion.merge(other.confusion),
        )


def _segments(sem, inst, is_thing, ignore_id):
    """Segment key per point: things by (class, instance), stuff by class."""
    inst = np.where(is_thing[sem], inst, 0)
    inst = np.where(sem == ignore_id, 0, inst)
    return sem, inst


def accumulate_panoptic(acc, pred, gt, cfg, min_points=0):
    """Add one frame. Segments of the same class are matched when IoU > 0.5;
    ignore points are removed from IoU unions, and predicted segments lying
    more than half on ignore points are not counted as false positives.
    Ground-truth segments smaller than ``min_points`` are treated as ignore.
    """
    ps, pi = np.asarray(pred.semantic), np.asarray(pred.instance)
    gs, gi = np.asarray(gt.semantic), np.asarray(gt.instance)
    if ps.shape != gs.shape:
        raise ShapeError(f"prediction has {ps.size} points, ground truth {gs.size}")
    ign = acc.ignore_id
    is_thing = np.asarray(cfg.is_thing, dtype=bool)
    ps, pi = _segments(ps, pi, is_thing, ign)
    gs, gi = _segments(gs, gi, is_thing, ign)

    confusion = accumulate_semantic(acc.confusion, ps, gs)

    # Encode segments as single integers: class * base + instance.
    base = int(max(pi.max(initial=0), gi.max(initial=0))) + 1
    gkey = gs * base + gi
    pkey = ps * base + pi

    g_ids, g_area = np.unique(gkey[gs != ign], return_counts=True)
    small = g_ids[g_area < min_points]
    void = (gs == ign) | np.isin(gkey, small)
    g_ids, g_area = g_ids[g_area >= min_points], g_area[g_area >= min_points]

    p_mask = ps != ign
    p_ids, p_area = np.unique(pkey[p_mask], return_counts=True)
    p_void_ids, p_void_cnt = np.unique(pkey[p_mask & void], return_counts=True)
    p_void = dict(zip(p_void_ids.tolist(), p_void_cnt.tolist()))

    both = (~void) & p_mask
    pair_ids, inter = np.unique(np.stack([gkey[both], pkey[both]]), axis=1, return_counts=True)
    g_area_d = dict(zip(g_ids.tolist(), g_area.tolist()))
    p_area_d = dict(zip(p_ids.tolist(), p_area.tolist()))

    tp, fp, fn, iou_sum = acc.tp.copy(), acc.fp.copy(), acc.fn.copy(), acc.iou_sum.copy()
    matched_g, matched_p = set(), set()
    for (gk, pk), n in zip(pair_ids.T.tolist(), inter.tolist()):
        if gk // base != pk // base or gk not in g_area_d:
            continue
        union = g_area_d[gk] + p_area_d[pk] - n - p_void.get(pk, 0)
        iou = n / union
        if iou > 0.5:
            assert gk not in matched_g and pk not in matched_p, "IoU > 0.5 matching must be unique"
            matched_g.add(gk)
            matched_p.add(pk)
            tp[gk // base] += 1
            iou_sum[gk // base] += iou
    for gk in g_area_d:
        if gk not in matched_g:
            fn[gk // base] += 1
    for pk, area in p_area_d.items():
        if pk in matched_p:
            continue
        if p_void.get(pk, 0) / area > 0.5:
            continue
        fp[pk // base] += 1
    return PanopticAccumulator(tp, fp, fn, iou_sum, confusion)


def _mean(values):
    values = [v for v in values if v is not None and not np.isnan(v)]
    return float(np.mean(values)) if values else None


def panoptic_report(acc, cfg):
    """Per-class PQ/RQ/SQ/IoU and the thing/stuff/all aggregates, including
    PQ-dagger (stuff classes scored by semantic IoU). Classes absent from
    both prediction and ground truth are left out of every mean; aggregates
    with no contributing class are ``None``."""
    iou, _ = miou(acc.confusion)
    classes = []
    for c in cfg.class_ids:
        tp, fp, fn = int(acc.tp[c]), int(acc.fp[c]), int(acc.fn[c])
        denom = tp + 0.5 * fp + 0.5 * fn
        present = tp + fp + fn > 0
        sq = acc.iou_sum[c] / tp if tp > 0 else 0.0
        rq = tp / denom if denom > 0 else 0.0
        pq = acc.iou_sum[c] / denom if denom > 0 else 0.0
        col = c - 1 if c > acc.ignore_id else c
        classes.append(
            {
                "id": c,
                "name": cfg.names[c],
                "thing": bool(cfg.is_thing[c]),
                "present": bool(present),
                "tp": tp,
                "fp": fp,
                "fn": fn,
                "pq": float(pq),
                "rq": float(rq),
                "sq": float(sq),
                "iou": None if np.isnan(iou[col]) else float(iou[col]),
            }
        )
    rep = {"classes": classes}
    groups = {"all": classes, "things": [r for r in classes if r["thing"]], "stuff": [r for r in classes if not r["thing"]]}
    for name, rows in groups.items():
        rows = [r for r in rows if r["present"]]
        for key in ("pq", "rq", "sq"):
            rep[f"{key}_{name}"] = _mean([r[key] for r in rows])
    dagger = []
    for r in classes:
        if r["thing"]:
            if r["present"]:
                dagger.append(r["pq"])
        elif r["iou"] is not None:
            dagger.append(r["iou"])
    rep["pq_dagger"] = _mean(dagger)
    rep["miou"] = _mean([r["iou"] for r in classes])
    return rep


def semantic_report(acc, cfg):
    iou, mean = miou(acc)
    cls_ids = [c for c in range(acc.matrix.shape[0]) if c != acc.ignore_id]
    return {
        "classes": [
            {"id": c, "name": cfg.names[c], "iou": None if np.isnan(v) else float(v)} for c, v in zip(cls_ids, iou)
        ],
        "miou": None if np.isnan(mean) else mean,
    }
