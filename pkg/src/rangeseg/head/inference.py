"""Mask prediction and semantic/panoptic merging of query outputs.

Class indices here are probability columns ``0..K-1``; column ``K`` is the
no-object class. Callers translate columns to dataset train ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from ..losses import sigmoid, softmax


def predict_masks(mask_embeddings, pixel_embeddings):
    e = np.asarray(mask_embeddings, dtype=np.float64)
    p = np.asarray(pixel_embeddings, dtype=np.float64)
    if e.shape[1] != p.shape[0]:
        raise ShapeError(f"mask embeddings have {e.shape[1]} channels, pixel embeddings {p.shape[0]}")
    return np.einsum("qc,chw->qhw", e, p)


def semantic_scores(class_logits, mask_logits):
    """K x H x W marginal class scores."""
    probs = softmax(class_logits)[:, :-1]
    return np.einsum("qc,qhw->chw", probs, sigmoid(mask_logits))


def semantic_inference(class_logits, mask_logits):
    """Per-pixel argmax of sum_q p_q(c) * sigmoid(m_q); ties go to the
    lowest class."""
    class_logits = np.asarray(class_logits)
    mask_logits = np.asarray(mask_logits)
    if class_logits.shape[0] != mask_logits.shape[0]:
        raise ShapeError("class and mask logits disagree on the number of queries")
    return semantic_scores(class_logits, mask_logits).argmax(axis=0)


def deep_a_predictions(outputs, pixel_embeddings):
    """Per decoder layer: (class_logits, mask_logits, semantic map)."""
    preds = []
    for cls, emb in outputs.per_layer:
        masks = predict_masks(emb, pixel_embeddings)
        preds.append((cls, masks, semantic_inference(cls, masks)))
    return preds


@dataclass
class PanopticMap:
    classes: np.ndarray  # H x W class column, -1 where void
    segments: np.ndarray  # H x W segment id, 0 where void
    segment_info: list = field(default_factory=list)  # dicts: id, category, isthing, queries

    def instance_ids(self):
        """Segment ids on thing pixels, 0 on stuff and void."""
        thing_ids = [s["id"] for s in self.segment_info if s["isthing"]]
        return np.where(np.isin(self.segments, thing_ids), self.segments, 0)


def panoptic_inference(class_logits, mask_logits, is_thing, object_threshold=0.8, overlap_threshold=0.8):
    """Merge confident queries into non-overlapping segments.

    Queries whose top class is real with probability >= ``object_threshold``
    compete per pixel on ``p_q * sigmoid(m_q)``. A query keeps a segment only
    if it wins at least ``overlap_threshold`` of its own mask footprint
    (pixels with sigmoid >= 0.5); losers are removed and the contest re-run
    until stable. A segment covers the pixels its query wins inside its own
    footprint; everything else is void. Stuff queries of one class share a
    segment id.
    """
    class_logits = np.asarray(class_logits, dtype=np.float64)
    mask_logits = np.asarray(mask_logits, dtype=np.float64)
    is_thing = np.asarray(is_thing, dtype=bool)
    q, kp1 = class_logits.shape
    if mask_logits.shape[0] != q:
        raise ShapeError("class and mask logits disagree on the number of queries")
    h, w = mask_logits.shape[1:]
    probs = softmax(class_logits)
    labels = probs.argmax(axis=1)
    scores = probs[np.arange(q), labels]
    alive = [i for i in range(q) if labels[i] != kp1 - 1 and scores[i] >= object_threshold]
    masks = sigmoid(mask_logits)
    footprint = masks >= 0.5

    while alive:
        weighted = scores[alive][:, None, None] * masks[alive]
        winner = weighted.argmax(axis=0)
        losers = []
        for slot, qi in enumerate(alive):
            own = footprint[qi].sum()
            kept = (footprint[qi] & (winner == slot)).sum()
            if own == 0 or kept == 0 or kept < overlap_threshold * own:
                losers.append(qi)
        if not losers:
            break
        alive = [qi for qi in alive if qi not in losers]

    classes = np.full((h, w), -1, dtype=np.int64)
    segments = np.zeros((h, w), dtype=np.int64)
    info = []
    if not alive:
        return PanopticMap(classes, segments, info)
    stuff_ids = {}
    next_id = 1
    for slot, qi in enumerate(alive):
        cat = int(labels[qi])
        region = (winner == slot) & footprint[qi]
        thing = bool(is_thing[cat])
        if not thing and cat in stuff_ids:
            sid = stuff_ids[cat]
            info[sid - 1]["queries"].append(qi)
        else:
            sid = next_id
            next_id += 1
            info.append({"id": sid, "category": cat, "isthing": thing, "queries": [qi]})
            if not thing:
                stuff_ids[cat] = sid
        classes[region] = cat
        segments[region] = sid
    return PanopticMap(classes, segments, info)
