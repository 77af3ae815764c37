"""Evaluation metrics: part prediction AP, edge prediction error, segmentation
mAP, and the structure-difference retrieval distance.

All functions are pure; per-shape evaluations may run in parallel and are
reduced with compensated summation so the result is order-independent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .assign import match_leaves, match_same_semantics
from .errors import InvalidSegmentation
from .geom import box_iou
from .structure import Hierarchy


@dataclass(frozen=True)
class EdgeCounts:
    """Edge-instance counts behind precision e_p and recall e_r."""

    true_pos: int
    pred_total: int
    gt_total: int

    def __post_init__(self):
        if self.true_pos > min(self.pred_total, self.gt_total):
            raise ValueError("true positives cannot exceed either total")

    def precision(self) -> float:
        return self.true_pos / self.pred_total if self.pred_total else 0.0

    def recall(self) -> float:
        return self.true_pos / self.gt_total if self.gt_total else 0.0


def part_ap(pred: Hierarchy, gt: Hierarchy, iou_thresh: float = 0.25) -> float:
    """Class-agnostic per-shape AP over Hungarian-matched leaf boxes.

    Predictions carry no confidence, so AP degenerates to
    TP / (TP + FP + FN) with FP/FN the unmatched leaf counts.
    """
    assignment = match_leaves(pred, gt)
    tp = 0
    for p, g in assignment.pairs:
        if box_iou(pred.nodes[p].box, gt.nodes[g].box) >= iou_thresh:
            tp += 1
    fp = len(pred.leaves()) - tp
    fn = len(gt.leaves()) - tp
    denom = tp + fp + fn
    return tp / denom if denom else 1.0


def _relation_instances(h: Hierarchy) -> set:
    out = set()
    for r in h.relations:
        a, b = min(r.a, r.b), max(r.a, r.b)
        for t in r.types:
            out.add((a, b, t))
    return out


def edge_counts(pred: Hierarchy, gt: Hierarchy) -> EdgeCounts:
    """Count relation instances (sibling pair, type) matched through M-hat."""
    mapping = match_same_semantics(pred, gt).as_dict()
    pred_instances = _relation_instances(pred)
    gt_instances = _relation_instances(gt)
    tp = 0
    for a, b, t in pred_instances:
        ga = mapping.get(a)
        gb = mapping.get(b)
        if ga is None or gb is None:
            continue
        if (min(ga, gb), max(ga, gb), t) in gt_instances:
            tp += 1
    return EdgeCounts(tp, len(pred_instances), len(gt_instances))


def edge_error_from_rates(e_p: float, e_r: float) -> float:
    if e_p + e_r == 0.0:
        return 1.0
    return 1.0 - 2.0 * (e_r * e_p) / (e_r + e_p)


def edge_error(pred: Hierarchy, gt: Hierarchy) -> float:
    """One minus the F1 score of relation prediction; 0 when both relation
    sets are empty, 1 when one side is empty but not the other."""
    counts = edge_counts(pred, gt)
    if counts.pred_total == 0 and counts.gt_total == 0:
        return 0.0
    return edge_error_from_rates(counts.precision(), counts.recall())


def _point_iou(a: frozenset, b: frozenset) -> float:
    inter = len(a & b)
    if inter == 0:
        return 0.0
    return inter / len(a | b)


def _ap_all_points(tp_flags: list, n_gt: int) -> float:
    """Area under the precision-recall curve, all-points interpolation."""
    if n_gt == 0:
        return 0.0
    precisions = []
    recalls = []
    tp = 0
    for k, flag in enumerate(tp_flags, start=1):
        tp += 1 if flag else 0
        precisions.append(tp / k)
        recalls.append(tp / n_gt)
    ap = 0.0
    prev_recall = 0.0
    best = 0.0
    # running max of precision from the tail gives the interpolated envelope
    envelope = [0.0] * len(precisions)
    for k in range(len(precisions) - 1, -1, -1):
        best = max(best, precisions[k])
        envelope[k] = best
    for k in range(len(precisions)):
        ap += (recalls[k] - prev_recall) * envelope[k]
        prev_recall = recalls[k]
    return ap


def segmentation_map(
    pred_segments,
    gt_segments,
    iou_thresh: float = 0.5,
    confidences=None,
    n_points: int = None,
):
    """Per-class AP (greedy confidence-ranked matching at point-set IoU) and mAP.

    Returns (per_class dict, mAP) where mAP averages the classes present in
    the ground truth. Predicted segments default to confidence 1.0.
    """
    pred_segments = list(pred_segments)
    gt_segments = list(gt_segments)
    if confidences is None:
        confidences = [1.0] * len(pred_segments)
    if len(confidences) != len(pred_segments):
        raise ValueError("one confidence per predicted segment required")
    if n_points is not None:
        for seg in list(pred_segments) + list(gt_segments):
            idx = seg.sorted_indices()
            if idx.size and (idx[0] < 0 or idx[-1] >= n_points):
                raise InvalidSegmentation("segment references points outside the cloud")

    classes = sorted({s.semantic for s in gt_segments})
    per_class = {}
    for cls in classes:
        gts = [s.point_indices for s in gt_segments if s.semantic == cls]
        dets = sorted(
            (
                (-confidences[i], i, pred_segments[i].point_indices)
                for i in range(len(pred_segments))
                if pred_segments[i].semantic == cls
            ),
        )
        matched = set()
        tp_flags = []
        for _, _, indices in dets:
            best_iou = 0.0
            best_j = None
            for j, gt_idx in enumerate(gts):
                if j in matched:
                    continue
                iou = _point_iou(indices, gt_idx)
                if iou > best_iou:
                    best_iou = iou
                    best_j = j
            if best_j is not None and best_iou >= iou_thresh:
                matched.add(best_j)
                tp_flags.append(True)
            else:
                tp_flags.append(False)
        per_class[cls] = _ap_all_points(tp_flags, len(gts))
    mean = math.fsum(per_class.values()) / len(per_class) if per_class else 0.0
    return per_class, mean


def segmentation_map_pooled(shape_entries, iou_thresh: float = 0.5):
    """Dataset-level mAP pooling detections across shapes per class.

    `shape_entries` is a list of (pred_segments, gt_segments) or
    (pred_segments, gt_segments, confidences) tuples, one per shape.
    """
    per_class_dets = {}
    per_class_gt_count = {}
    for shape_idx, entry in enumerate(shape_entries):
        pred_segments, gt_segments = entry[0], entry[1]
        confidences = entry[2] if len(entry) > 2 else [1.0] * len(list(pred_segments))
        for s in gt_segments:
            per_class_gt_count[s.semantic] = per_class_gt_count.get(s.semantic, 0) + 1
        for i, s in enumerate(pred_segments):
            per_class_dets.setdefault(s.semantic, []).append(
                (-confidences[i], shape_idx, i, s.point_indices)
            )

    gt_by_shape_class = {}
    for shape_idx, entry in enumerate(shape_entries):
        for j, s in enumerate(entry[1]):
            gt_by_shape_class.setdefault((shape_idx, s.semantic), []).append((j, s.point_indices))

    per_class = {}
    for cls in sorted(per_class_gt_count):
        dets = sorted(per_class_dets.get(cls, []))
        matched = set()
        tp_flags = []
        for _, shape_idx, _, indices in dets:
            best_iou = 0.0
            best_key = None
            for j, gt_idx in gt_by_shape_class.get((shape_idx, cls), []):
                key = (shape_idx, j)
                if key in matched:
                    continue
                iou = _point_iou(indices, gt_idx)
                if iou > best_iou:
                    best_iou = iou
                    best_key = key
            if best_key is not None and best_iou >= iou_thresh:
                matched.add(best_key)
                tp_flags.append(True)
            else:
                tp_flags.append(False)
        per_class[cls] = _ap_all_points(tp_flags, per_class_gt_count[cls])
    mean = math.fsum(per_class.values()) / len(per_class) if per_class else 0.0
    return per_class, mean


def structure_difference(a: Hierarchy, b: Hierarchy) -> int:
    """Count of semantically unmatched leaf parts; 0 means identical inventories."""
    assignment = match_same_semantics(a, b)
    a_leaves = set(a.leaves())
    b_leaves = set(b.leaves())
    matched = sum(1 for p, g in assignment.pairs if p in a_leaves and g in b_leaves)
    return len(a_leaves) + len(b_leaves) - 2 * matched


@dataclass
class MetricReport:
    """Dataset-level report: per-shape AP/EE breakdown plus their means."""

    ap_25: float
    edge_error: float
    per_shape: list = field(default_factory=list)
    segmentation: dict = field(default_factory=dict)

    @staticmethod
    def from_shapes(per_shape: list) -> "MetricReport":
        n = len(per_shape)
        ap = math.fsum(s.get("ap_25", 0.0) for s in per_shape) / n if n else 0.0
        ee = math.fsum(s.get("edge_error", 0.0) for s in per_shape) / n if n else 0.0
        return MetricReport(ap_25=ap, edge_error=ee, per_shape=list(per_shape))

    def to_json(self) -> dict:
        out = {
            "ap_25": self.ap_25,
            "edge_error": self.edge_error,
            "per_shape": self.per_shape,
        }
        if self.segmentation:
            out["segmentation"] = self.segmentation
        return out
