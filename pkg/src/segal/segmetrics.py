"""Segmentation accuracy: object-level F1, object-level Dice, Jaccard index.

Objects are 8-connected components of the foreground class.  The object
metrics follow the gland-segmentation evaluation lineage: greedy IoU
matching for F1, area-weighted maximal-overlap Dice for the object Dice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class ObjectSet:
    """Connected foreground components, ordered by (min row, min col)."""

    shape: tuple
    objects: list[np.ndarray]  # each an (n_i, 2) array of (row, col) pixels

    def __len__(self):
        return len(self.objects)

    def areas(self) -> np.ndarray:
        return np.array([len(o) for o in self.objects], dtype=np.int64)


def connected_components(mask, foreground: int = 1) -> ObjectSet:
    """Extract 8-connected components of ``mask == foreground``."""
    mask = np.asarray(mask)
    binary = mask == foreground
    labeled, count = ndimage.label(binary, structure=EIGHT_CONNECTED)
    objects = []
    for idx in range(1, count + 1):
        rows, cols = np.nonzero(labeled == idx)
        objects.append(np.stack([rows, cols], axis=1))
    objects.sort(key=lambda o: (int(o[:, 0].min()), int(o[:, 1].min())))
    return ObjectSet(mask.shape, objects)


def jaccard(pred, gt, foreground: int = 1) -> float:
    """Pixel IoU of the foreground class; 1 when both masks are empty."""
    p = np.asarray(pred) == foreground
    g = np.asarray(gt) == foreground
    if p.shape != g.shape:
        raise ValueError("pred and gt shapes differ")
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def _label_grid(objects: ObjectSet) -> np.ndarray:
    """Grid of 1-based object indices (0 = background)."""
    grid = np.zeros(objects.shape, dtype=np.int64)
    for i, pix in enumerate(objects.objects, start=1):
        grid[pix[:, 0], pix[:, 1]] = i
    return grid


def _overlap_matrix(pred_objs: ObjectSet, gt_objs: ObjectSet) -> np.ndarray:
    """overlaps[i, j] = pixels shared by predicted object i and gt object j."""
    np_, ng = len(pred_objs), len(gt_objs)
    overlaps = np.zeros((np_, ng), dtype=np.int64)
    gt_grid = _label_grid(gt_objs)
    for i, pix in enumerate(pred_objs.objects):
        hits = gt_grid[pix[:, 0], pix[:, 1]]
        hits = hits[hits > 0]
        if hits.size:
            counts = np.bincount(hits, minlength=ng + 1)
            overlaps[i] += counts[1:]
    return overlaps


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]  # (pred index, gt index, IoU)
    unmatched_pred: list[int]
    unmatched_gt: list[int]


def match_objects(pred_objs: ObjectSet, gt_objs: ObjectSet) -> MatchResult:
    """Greedy one-to-one matching by descending IoU, deterministic ties."""
    overlaps = _overlap_matrix(pred_objs, gt_objs)
    pred_areas = pred_objs.areas()
    gt_areas = gt_objs.areas()
    candidates = []
    for i in range(len(pred_objs)):
        for j in range(len(gt_objs)):
            inter = overlaps[i, j]
            if inter > 0:
                iou = inter / (pred_areas[i] + gt_areas[j] - inter)
                candidates.append((-iou, i, j))
    candidates.sort()
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    pairs = []
    for neg_iou, i, j in candidates:
        if i in used_pred or j in used_gt:
            continue
        pairs.append((i, j, -neg_iou))
        used_pred.add(i)
        used_gt.add(j)
    return MatchResult(
        pairs,
        [i for i in range(len(pred_objs)) if i not in used_pred],
        [j for j in range(len(gt_objs)) if j not in used_gt],
    )


def object_f1(pred_objs: ObjectSet, gt_objs: ObjectSet, iou_threshold: float = 0.5):
    """(precision, recall, F1) with matches above the IoU threshold as TPs."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must be in (0, 1]")
    matches = match_objects(pred_objs, gt_objs)
    tp = sum(1 for _, _, iou in matches.pairs if iou > iou_threshold)
    n_pred, n_gt = len(pred_objs), len(gt_objs)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    if n_pred == 0 and n_gt == 0:
        precision = recall = f1 = 1.0
    return precision, recall, f1


def object_dice(pred, gt, foreground: int = 1) -> float:
    """Area-weighted Dice over maximal-overlap object pairs, both directions.

    Each ground-truth object is scored against the predicted object it
    overlaps most (and vice versa); objects with no overlap score 0.  The
    two direction sums are weighted by area fractions and averaged.
    """
    pred_objs = connected_components(pred, foreground)
    gt_objs = connected_components(gt, foreground)
    if len(pred_objs) == 0 and len(gt_objs) == 0:
        return 1.0
    if len(pred_objs) == 0 or len(gt_objs) == 0:
        return 0.0
    overlaps = _overlap_matrix(pred_objs, gt_objs)
    pred_areas = pred_objs.areas().astype(np.float64)
    gt_areas = gt_objs.areas().astype(np.float64)

    def directional(areas, partner_areas, olap):
        # olap[i, j]: rows are this direction's objects
        weights = areas / areas.sum()
        total = 0.0
        for i in range(len(areas)):
            j = int(np.argmax(olap[i]))  # ties: lower partner index
            inter = olap[i, j]
            if inter > 0:
                total += weights[i] * 2.0 * inter / (areas[i] + partner_areas[j])
        return total

    gt_side = directional(gt_areas, pred_areas, overlaps.T)
    pred_side = directional(pred_areas, gt_areas, overlaps)
    return 0.5 * (gt_side + pred_side)


def segmentation_scores(pred, gt, iou_threshold: float = 0.5) -> dict:
    """F1, object Dice, and Jaccard for one predicted mask."""
    pred_objs = connected_components(pred)
    gt_objs = connected_components(gt)
    _, _, f1 = object_f1(pred_objs, gt_objs, iou_threshold)
    return {
        "f1": f1,
        "dice_obj": object_dice(pred, gt),
        "jaccard": jaccard(pred, gt),
    }
