"""Region similarity J, boundary F-measure, and the long-term tracking F-score."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .geometry import BitMask, mask_iou

_CROSS = ndimage.generate_binary_structure(2, 1)


def region_similarity(pred: BitMask, gt: BitMask) -> float:
    return mask_iou(pred, gt)


def default_tolerance(width: int, height: int) -> int:
    return max(1, math.ceil(0.008 * math.hypot(width, height)))


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels 4-adjacent to background or to the image border."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, _CROSS, border_value=0)


def contour_accuracy(pred: BitMask, gt: BitMask, tol: Optional[float] = None) -> float:
    if pred.shape != gt.shape:
        raise ValueError(f"mask dimensions differ: {pred.shape} vs {gt.shape}")
    if tol is None:
        tol = default_tolerance(pred.width, pred.height)
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    bp, bg = boundary(pred.to_array()), boundary(gt.to_array())
    if not bp.any() and not bg.any():
        return 1.0
    if not bp.any() or not bg.any():
        return 0.0
    dist_to_gt = ndimage.distance_transform_edt(~bg)
    dist_to_pred = ndimage.distance_transform_edt(~bp)
    precision = float(np.mean(dist_to_gt[bp] <= tol))
    recall = float(np.mean(dist_to_pred[bg] <= tol))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def longterm_f_score(confidences: Sequence[float], pred_present: Sequence[bool],
                     gt_present: Sequence[bool], overlaps: Sequence[float]) -> Tuple[float, Optional[float]]:
    """Maximum tracking F-score over confidence thresholds.

    At threshold ``tau`` a frame is reported when a prediction exists with
    confidence ``>= tau``. Precision averages the overlap over reported
    frames, recall over ground-truth-present frames (unreported ones count
    as zero). Returns ``(max F, threshold)``; the lowest threshold wins ties
    and the threshold is ``None`` when nothing is ever reported.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    pred = np.asarray(pred_present, dtype=bool)
    gt = np.asarray(gt_present, dtype=bool)
    quality = np.asarray(overlaps, dtype=np.float64)
    if not (conf.shape == pred.shape == gt.shape == quality.shape):
        raise ValueError("confidences, presence flags and overlaps must be aligned")
    quality = np.where(pred & gt, quality, 0.0)
    n_gt = int(gt.sum())
    best, best_tau = 0.0, None
    for tau in np.unique(conf[pred]):
        reported = pred & (conf >= tau)
        n = int(reported.sum())
        precision = float(quality[reported].sum()) / n if n else 0.0
        recall = float(quality[reported].sum()) / n_gt if n_gt else 0.0
        f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        if best_tau is None or f > best:
            best, best_tau = f, float(tau)
    return best, best_tau


@dataclass
class ObjectScores:
    id: int
    j: List[float]
    f: List[float]
    lt_f: float
    lt_threshold: Optional[float]

    @property
    def j_mean(self) -> float:
        return float(np.mean(self.j)) if self.j else 0.0

    @property
    def f_mean(self) -> float:
        return float(np.mean(self.f)) if self.f else 0.0


@dataclass
class SequenceScores:
    name: str
    frames: int
    objects: List[ObjectScores] = field(default_factory=list)

    def mean(self, attr: str) -> float:
        return float(np.mean([getattr(o, attr) for o in self.objects])) if self.objects else 0.0


def evaluate_labels(name: str, pred_labels: Sequence[np.ndarray], gt_labels: Sequence[np.ndarray],
                    ids: Sequence[int], confidences: Optional[Sequence[Sequence[float]]] = None,
                    tol: Optional[float] = None) -> SequenceScores:
    """Score label maps; J and F average frames 2..T, object ``k`` is label ``k``.

    ``confidences[t][i]`` belongs to ``ids[i]``; missing confidences count as 1.
    """
    if len(pred_labels) != len(gt_labels):
        raise ValueError(f"{name}: {len(pred_labels)} predicted frames vs {len(gt_labels)} ground-truth frames")
    scores = SequenceScores(name, len(gt_labels))
    for i, k in enumerate(ids):
        js, fs, conf, pp, gp, ov = [], [], [], [], [], []
        for t in range(len(gt_labels)):
            if pred_labels[t].shape != gt_labels[t].shape:
                raise ValueError(f"{name}: frame {t} prediction and ground truth differ in size")
            p = BitMask.from_array(pred_labels[t] == k)
            g = BitMask.from_array(gt_labels[t] == k)
            j = region_similarity(p, g)
            if t > 0:
                js.append(j)
                fs.append(contour_accuracy(p, g, tol))
                conf.append(1.0 if confidences is None else float(confidences[t][i]))
                pp.append(p.count > 0)
                gp.append(g.count > 0)
                ov.append(j)
        lt_f, lt_tau = longterm_f_score(conf, pp, gp, ov) if conf else (0.0, None)
        scores.objects.append(ObjectScores(k, js, fs, lt_f, lt_tau))
    return scores


REPORT_FIELDS = ("sequence", "objects", "frames", "J_mean", "F_mean", "JF_mean", "LT_F")


def format_report(results: Sequence[SequenceScores]) -> str:
    """Tab-separated table: one row per sequence, then an ``ALL`` row averaging every object."""
    lines = ["\t".join(REPORT_FIELDS)]

    def row(name, objs, frames):
        j = float(np.mean([o.j_mean for o in objs])) if objs else 0.0
        f = float(np.mean([o.f_mean for o in objs])) if objs else 0.0
        lt = float(np.mean([o.lt_f for o in objs])) if objs else 0.0
        return f"{name}\t{len(objs)}\t{frames}\t{j:.6f}\t{f:.6f}\t{(j + f) / 2:.6f}\t{lt:.6f}"

    for r in results:
        lines.append(row(r.name, r.objects, r.frames))
    everything = [o for r in results for o in r.objects]
    lines.append(row("ALL", everything, sum(r.frames for r in results)))
    return "\n".join(lines) + "\n"
