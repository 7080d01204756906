"""TRA: tracking accuracy from weighted graph edit operations (AOGM).

A tracking result is an acyclic graph whose vertices are per-frame
detections and whose edges link a detection to its successor in the same
track or to a daughter track's first detection. AOGM counts the weighted
operations turning the predicted graph into the ground truth; TRA
normalizes it by the cost AOGM_0 of building the ground truth from nothing:

    TRA = 1 - min(AOGM, AOGM_0) / AOGM_0
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import CongruenceError
from .seg import match_frame

TRACK_EDGE = "track"
PARENT_EDGE = "parent"


@dataclass(frozen=True)
class AogmWeights:
    """Operation weights; defaults follow the Cell Tracking Challenge."""

    split: float = 5.0        # NS: one pred detection covers several gt cells
    add_vertex: float = 10.0  # FN: missing detection
    delete_vertex: float = 1.0  # FP: spurious detection
    delete_edge: float = 1.0  # ED: redundant link
    add_edge: float = 1.5     # EA: missing link
    change_edge: float = 1.0  # EC: link with wrong semantics (track vs parent)


@dataclass(frozen=True)
class TrackingGraph:
    masks: tuple     # per-frame label rasters
    vertices: frozenset  # of (frame, label)
    edges: dict      # ((frame, label), (frame, label)) -> edge kind

    @classmethod
    def from_masks(cls, masks, lineage=()) -> "TrackingGraph":
        """Derive the graph: same-label detections in consecutive frames are
        track-linked; lineage rows with parent != 0 add parent->daughter edges."""
        masks = tuple(np.asarray(m) for m in masks)
        per_track: dict = {}
        for f, m in enumerate(masks):
            for label in (int(v) for v in np.unique(m) if v != 0):
                per_track.setdefault(label, []).append(f)
        vertices = frozenset((f, lab) for lab, fs in per_track.items() for f in fs)
        edges = {}
        for lab, fs in per_track.items():
            for a, b in zip(fs, fs[1:]):
                edges[((a, lab), (b, lab))] = TRACK_EDGE
        for rec in lineage:
            if rec.parent and rec.parent in per_track and rec.label in per_track:
                tail = (max(per_track[rec.parent]), rec.parent)
                head = (min(per_track[rec.label]), rec.label)
                if tail[0] < head[0]:
                    edges[(tail, head)] = PARENT_EDGE
        return cls(masks=masks, vertices=vertices, edges=edges)


def _match_vertices(gt: TrackingGraph, pred: TrackingGraph) -> dict:
    """gt vertex -> pred vertex under the >0.5 coverage rule, per frame."""
    mapping = {}
    for f, (g, p) in enumerate(zip(gt.masks, pred.masks)):
        for gt_label, pred_label, _ in match_frame(g, p, frame=f).matches:
            mapping[(f, gt_label)] = (f, pred_label)
    return mapping


def aogm(gt: TrackingGraph, pred: TrackingGraph,
         weights: AogmWeights = AogmWeights()) -> float:
    """Weighted operation count transforming ``pred`` into ``gt``."""
    if len(gt.masks) != len(pred.masks):
        raise CongruenceError(
            f"sequence lengths differ: {len(gt.masks)} vs {len(pred.masks)}")
    for f, (g, p) in enumerate(zip(gt.masks, pred.masks)):
        if g.shape != p.shape:
            raise CongruenceError(f"frame {f}: raster shapes differ")

    mapping = _match_vertices(gt, pred)
    fn = len(gt.vertices) - len(mapping)
    covered: dict = {}
    for pv in mapping.values():
        covered[pv] = covered.get(pv, 0) + 1
    fp = sum(1 for pv in pred.vertices if pv not in covered)
    ns = sum(k - 1 for k in covered.values())

    ea = ec = 0
    used_pred_edges = set()
    for (a, b), kind in gt.edges.items():
        pa, pb = mapping.get(a), mapping.get(b)
        if pa is None or pb is None or (pa, pb) not in pred.edges:
            ea += 1
            continue
        used_pred_edges.add((pa, pb))
        if pred.edges[(pa, pb)] != kind:
            ec += 1
    ed = sum(1 for e in pred.edges if e not in used_pred_edges)

    return (weights.split * ns + weights.add_vertex * fn + weights.delete_vertex * fp
            + weights.delete_edge * ed + weights.add_edge * ea + weights.change_edge * ec)


def aogm_empty(gt: TrackingGraph, weights: AogmWeights = AogmWeights()) -> float:
    """Cost of building the ground truth from an empty graph."""
    return weights.add_vertex * len(gt.vertices) + weights.add_edge * len(gt.edges)


def tra_score(gt: TrackingGraph, pred: TrackingGraph,
              weights: AogmWeights = AogmWeights()) -> float:
    baseline = aogm_empty(gt, weights)
    if baseline == 0.0:
        return 1.0  # empty ground truth: nothing to get wrong
    return 1.0 - min(aogm(gt, pred, weights), baseline) / baseline
