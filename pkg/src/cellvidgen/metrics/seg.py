"""SEG: mean Jaccard over ground-truth objects under the >0.5 coverage rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import CongruenceError


@dataclass(frozen=True)
class FrameMatches:
    """Matching outcome for one frame of a mask sequence."""

    frame: int
    matches: tuple    # (gt_label, pred_label, jaccard) triples
    unmatched: tuple  # gt labels with no covering prediction


def check_congruent(gt_masks, pred_masks) -> None:
    if len(gt_masks) != len(pred_masks):
        raise CongruenceError(
            f"sequence lengths differ: {len(gt_masks)} vs {len(pred_masks)}")
    for f, (g, p) in enumerate(zip(gt_masks, pred_masks)):
        if np.asarray(g).shape != np.asarray(p).shape:
            raise CongruenceError(f"frame {f}: raster shapes differ")


def match_frame(gt: np.ndarray, pred: np.ndarray, frame: int = 0) -> FrameMatches:
    """Match each gt object to the prediction covering > half of its area.

    The majority requirement makes the match unique; a gt object covered
    mostly by background stays unmatched.
    """
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    matches, unmatched = [], []
    pred_areas = {int(v): int(n) for v, n in zip(*np.unique(pred, return_counts=True))}
    for gt_label in (int(v) for v in np.unique(gt) if v != 0):
        region = gt == gt_label
        area = int(region.sum())
        vals, counts = np.unique(pred[region], return_counts=True)
        best = None
        for v, n in zip(vals, counts):
            if v != 0 and 2 * int(n) > area:
                best = (int(v), int(n))
        if best is None:
            unmatched.append(gt_label)
            continue
        pred_label, inter = best
        union = area + pred_areas[pred_label] - inter
        matches.append((gt_label, pred_label, inter / union))
    return FrameMatches(frame=frame, matches=tuple(matches), unmatched=tuple(unmatched))


def seg_score(gt_masks, pred_masks) -> float:
    """Mean Jaccard over all gt objects; unmatched objects score 0.

    Frames without any gt object contribute nothing to the mean. An empty
    ground truth across all frames yields 0.0.
    """
    gt_masks, pred_masks = list(gt_masks), list(pred_masks)
    check_congruent(gt_masks, pred_masks)
    scores = []
    for f, (g, p) in enumerate(zip(gt_masks, pred_masks)):
        fm = match_frame(g, p, frame=f)
        scores.extend(j for _, _, j in fm.matches)
        scores.extend(0.0 for _ in fm.unmatched)
    return float(np.mean(scores)) if scores else 0.0
