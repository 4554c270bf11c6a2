"""Segmentation and change-detection scoring.

Pixel scores are intersection-over-union computed from a confusion
count (IOU = TP / (TP + FP + FN)); change maps are scored at blob
level by greedy one-to-one matching on cell IOU.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .change import CHANGE_LABELS, ChangeMap, LABEL_NODATA
from .errors import ShapeMismatch, SpecMismatch

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


def confusion(pred, truth, evaluate_mask=None) -> ConfusionCounts:
    """Counts over cells where evaluate_mask is 1 (all cells if None)."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs truth {truth.shape}")
    if evaluate_mask is None:
        evaluate_mask = np.ones(pred.shape, dtype=bool)
    elif evaluate_mask.shape != pred.shape:
        raise ShapeMismatch("evaluate_mask shape differs")
    m = evaluate_mask.astype(bool)
    p = pred.astype(bool) & m
    t = truth.astype(bool) & m
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t & m))
    fn = int(np.count_nonzero(~p & t & m))
    tn = int(np.count_nonzero(m)) - tp - fp - fn
    return ConfusionCounts(tp, fp, fn, tn)


def iou(c: ConfusionCounts) -> float:
    """TP / (TP + FP + FN); 1.0 when both masks are empty (0/0 convention)."""
    denom = c.tp + c.fp + c.fn
    if denom == 0:
        return 1.0
    return c.tp / denom


def mask_iou(pred, truth, evaluate_mask=None) -> float:
    return iou(confusion(pred, truth, evaluate_mask))


def _class_blobs(label_grid, lab):
    labels, n = ndimage.label(label_grid == lab, structure=_EIGHT)
    return [labels == k for k in range(1, n + 1)]


def blob_pr(pred: ChangeMap, truth: ChangeMap, iou_match_threshold: float = 0.5):
    """Per-class blob precision and recall.

    A predicted blob matches a truth blob of the same class when their
    cell IOU reaches the threshold; matching is greedy one-to-one by
    descending IOU.  Empty sides follow the convention precision=1
    with no predictions and recall=1 with no truth blobs.

    Returns {label: (precision, recall)} for every class present on
    either side.
    """
    if not pred.spec.same_geometry(truth.spec):
        raise SpecMismatch("prediction and truth grids differ")
    out = {}
    for lab in CHANGE_LABELS:
        pblobs = _class_blobs(pred.label, lab)
        tblobs = _class_blobs(truth.label, lab)
        if not pblobs and not tblobs:
            continue
        pairs = []
        for i, pb in enumerate(pblobs):
            for j, tb in enumerate(tblobs):
                inter = np.count_nonzero(pb & tb)
                if inter == 0:
                    continue
                union = np.count_nonzero(pb | tb)
                score = inter / union
                if score >= iou_match_threshold:
                    pairs.append((score, i, j))
        pairs.sort(key=lambda t: -t[0])
        used_p, used_t = set(), set()
        matched = 0
        for score, i, j in pairs:
            if i in used_p or j in used_t:
                continue
            used_p.add(i)
            used_t.add(j)
            matched += 1
        precision = 1.0 if not pblobs else matched / len(pblobs)
        recall = 1.0 if not tblobs else matched / len(tblobs)
        out[lab] = (precision, recall)
    return out


def evaluation_report(pred: ChangeMap, truth: ChangeMap) -> str:
    """key=value text block combining pixel IOU and per-class blob P/R."""
    from .change import LABEL_NAMES

    evaluate = (pred.label != LABEL_NODATA) & (truth.label != LABEL_NODATA)
    lines = []
    pixel = mask_iou(np.isin(pred.label, CHANGE_LABELS),
                     np.isin(truth.label, CHANGE_LABELS), evaluate)
    lines.append(f"pixel_change_iou={pixel:.6f}")
    for lab, (p, r) in sorted(blob_pr(pred, truth).items()):
        lines.append(f"{LABEL_NAMES[lab]}_precision={p:.6f}")
        lines.append(f"{LABEL_NAMES[lab]}_recall={r:.6f}")
    return "\n".join(lines) + "\n"
