"""Optimal bipartite assignment and the leaf / same-semantics correspondence maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidCost
from .geom import box_iou
from .structure import Hierarchy

# Sentinel cost for forbidden pairs; anything at or above LARGE/2 in the
# solution is reported unmatched instead of paired.
LARGE = 1e9


@dataclass(frozen=True)
class Assignment:
    """A partial bijection between two id sets plus the kept pairs' cost."""

    pairs: tuple  # ((pred_id, gt_id), ...)
    unmatched_pred: tuple
    unmatched_gt: tuple
    total_cost: float

    def as_dict(self) -> dict:
        return dict(self.pairs)


def hungarian(cost) -> Assignment:
    """Minimum-cost assignment of a rectangular cost matrix.

    Ids are row/column indices. Pairs whose cost is >= LARGE/2 are treated as
    forbidden and reported unmatched. Ties resolve deterministically (lowest
    row, then column).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        cost = cost.reshape((cost.shape[0], -1)) if cost.size else cost.reshape((0, 0))
    if np.isnan(cost).any():
        raise InvalidCost("cost matrix contains NaN")
    n, m = cost.shape
    if n == 0 or m == 0:
        return Assignment((), tuple(range(n)), tuple(range(m)), 0.0)
    rows, cols = linear_sum_assignment(cost)
    pairs = []
    total = 0.0
    for r, c in sorted(zip(rows.tolist(), cols.tolist())):
        if cost[r, c] >= LARGE / 2:
            continue
        pairs.append((r, c))
        total += float(cost[r, c])
    matched_r = {r for r, _ in pairs}
    matched_c = {c for _, c in pairs}
    return Assignment(
        tuple(pairs),
        tuple(i for i in range(n) if i not in matched_r),
        tuple(j for j in range(m) if j not in matched_c),
        total,
    )


def _remap(assignment: Assignment, pred_ids, gt_ids) -> Assignment:
    return Assignment(
        tuple((pred_ids[r], gt_ids[c]) for r, c in assignment.pairs),
        tuple(pred_ids[i] for i in assignment.unmatched_pred),
        tuple(gt_ids[j] for j in assignment.unmatched_gt),
        assignment.total_cost,
    )


def match_leaves(pred: Hierarchy, gt: Hierarchy) -> Assignment:
    """Hungarian leaf correspondence with cost 1 - IoU; zero-IoU pairs forbidden."""
    pred.require_leaf_boxes()
    gt.require_leaf_boxes()
    pl = pred.leaves()
    gl = gt.leaves()
    cost = np.empty((len(pl), len(gl)), dtype=np.float64)
    for i, p in enumerate(pl):
        for j, g in enumerate(gl):
            iou = box_iou(pred.nodes[p].box, gt.nodes[g].box)
            cost[i, j] = LARGE if iou == 0.0 else 1.0 - iou
    return _remap(hungarian(cost), pl, gl)


def match_same_semantics(pred: Hierarchy, gt: Hierarchy) -> Assignment:
    """Per-level Hungarian correspondence restricted to label-equal pairs."""
    pred.require_all_boxes()
    gt.require_all_boxes()
    pred_levels = pred.nodes_by_depth()
    gt_levels = gt.nodes_by_depth()
    pairs = []
    unmatched_pred = []
    unmatched_gt = []
    total = 0.0
    for depth in sorted(set(pred_levels) | set(gt_levels)):
        pl = pred_levels.get(depth, [])
        gl = gt_levels.get(depth, [])
        if not pl or not gl:
            unmatched_pred.extend(pl)
            unmatched_gt.extend(gl)
            continue
        cost = np.empty((len(pl), len(gl)), dtype=np.float64)
        for i, p in enumerate(pl):
            for j, g in enumerate(gl):
                if pred.nodes[p].semantic != gt.nodes[g].semantic:
                    cost[i, j] = LARGE
                else:
                    cost[i, j] = 1.0 - box_iou(pred.nodes[p].box, gt.nodes[g].box)
        sub = _remap(hungarian(cost), pl, gl)
        pairs.extend(sub.pairs)
        unmatched_pred.extend(sub.unmatched_pred)
        unmatched_gt.extend(sub.unmatched_gt)
        total += sub.total_cost
    return Assignment(tuple(pairs), tuple(unmatched_pred), tuple(unmatched_gt), total)
