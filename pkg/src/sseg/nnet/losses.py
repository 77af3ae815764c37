"""Training losses: corner-matched box loss, axis-alignment surrogate,
relation BCE, focal loss, and the candidate merge loss."""
from __future__ import annotations

import math

import numpy as np

from ..errors import InvalidProbability
from ..geom import OrientedBox, _CORNER_SIGNS
from . import autodiff as ad
from .autodiff import Tensor
from .models import BoxPrediction, quat_to_matrix

LAMBDA_BOX = 20.0
LAMBDA_NORM = 10.0
PROB_CLAMP = 1e-7
FOCAL_ALPHA = 0.15
FOCAL_GAMMA = 2.0


def box_loss(pred: BoxPrediction, gt: OrientedBox) -> Tensor:
    """Mean squared distance over the 8 corners.

    Each predicted corner is matched to the nearest ground-truth corner by
    the sign of its coordinates in the ground-truth frame, so the loss is
    invariant to axis permutations/flips that leave the box geometry alone.
    """
    rot = quat_to_matrix(pred.quat)
    half = pred.extents * 0.5
    local = Tensor(_CORNER_SIGNS) * half  # (8, 3)
    corners = local @ ad.transpose(rot) + pred.center

    gt_rot = gt.rotation.rotation_matrix()
    gt_center = gt.translation.as_array()
    gt_half = gt.scale.as_array() / 2.0
    local_in_gt = (corners.data - gt_center) @ gt_rot
    signs = np.where(local_in_gt >= 0, 1.0, -1.0)
    targets = gt_center + (signs * gt_half) @ gt_rot.T

    diff = corners - targets
    return ad.tmean(ad.tsum(diff * diff, axis=1))


def norm_loss(pred_quat: Tensor, gt: OrientedBox) -> Tensor:
    """Orientation surrogate: sum over axes of 1 - |<pred axis, gt axis>|."""
    rot = quat_to_matrix(pred_quat)
    gt_rot = gt.rotation.rotation_matrix()
    total = Tensor(0.0)
    for k in range(3):
        dot = ad.tsum(rot[:, k] * gt_rot[:, k])
        total = total + (1.0 - ad.absolute(dot))
    return total


def edge_loss(prob_tensors, labels) -> Tensor:
    """Mean binary cross-entropy over the four relation types across pairs."""
    prob_tensors = list(prob_tensors)
    labels = list(labels)
    if not prob_tensors:
        return Tensor(0.0)
    terms = []
    for probs, y in zip(prob_tensors, labels):
        y = np.asarray(y, dtype=np.float64)
        p = ad.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
        terms.append(-(Tensor(y) * ad.log(p) + Tensor(1.0 - y) * ad.log(1.0 - p)))
    return ad.tmean(ad.concat(terms))


def total_loss(box: Tensor, norm: Tensor, edge: Tensor, cons: float = 0.0) -> Tensor:
    """lambda1 * L_box + lambda2 * L_norm + L_edge + L_cons (cons fixed at 0)."""
    return box * LAMBDA_BOX + norm * LAMBDA_NORM + edge + cons


def focal_loss(score, label: int, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA):
    """Reweighted cross-entropy -alpha_t (1 - p_t)^gamma log(p_t).

    Accepts a plain probability (returns a float) or a Tensor (differentiable).
    Scores are clamped to [1e-7, 1 - 1e-7] before the log.
    """
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    if isinstance(score, Tensor):
        value = float(score.data)
        if not (0.0 <= value <= 1.0) or not math.isfinite(value):
            raise InvalidProbability(f"merge score {value!r} outside [0, 1]")
        p = ad.clip(score, PROB_CLAMP, 1.0 - PROB_CLAMP)
        p_t = p if label == 1 else 1.0 - p
        a_t = alpha if label == 1 else 1.0 - alpha
        return (-a_t) * ad.pow_const(1.0 - p_t, gamma) * ad.log(p_t)
    value = float(score)
    if not (0.0 <= value <= 1.0) or not math.isfinite(value):
        raise InvalidProbability(f"score {value!r} outside [0, 1]")
    value = min(max(value, PROB_CLAMP), 1.0 - PROB_CLAMP)
    p_t = value if label == 1 else 1.0 - value
    a_t = alpha if label == 1 else 1.0 - alpha
    return -a_t * (1.0 - p_t) ** gamma * math.log(p_t)


def merge_loss(scored_pairs, gt_pairs, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA):
    """Sum of focal losses over candidate pairs labeled by the gt merge set.

    `scored_pairs` holds (source, target, score) entries; a pair's label is 1
    iff (source, target) is in `gt_pairs`. Returns a Tensor when any score is
    a Tensor, otherwise a float; an empty candidate set gives 0.
    """
    scored_pairs = list(scored_pairs)
    gt_pairs = set(gt_pairs)
    if not scored_pairs:
        return Tensor(0.0)
    total = None
    for source, target, score in scored_pairs:
        label = 1 if (source, target) in gt_pairs else 0
        term = focal_loss(score, label, alpha=alpha, gamma=gamma)
        total = term if total is None else total + term
    return total
