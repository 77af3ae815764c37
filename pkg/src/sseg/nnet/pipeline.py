"""Forward inference over a part hierarchy, loss assembly, and the merge
candidate scoring path shared by training, evaluation, and the CLI."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..geom import pca_obb
from ..refine import CandidateMatrix, MergeDecision, apply_merges, detect_conflicts
from ..structure import Hierarchy, Relation, RelationType, Taxonomy, build_hierarchy
from .autodiff import Tensor
from .models import (
    EDGE_KEEP_THRESHOLD,
    aggregate_children,
    classify_relations,
    decode_box,
    encode_part,
    inject_parent_context,
    merge_score,
    message_pass,
    node_geometry,
)
from .params import ModelParams

# Canonical relation-type order for label vectors and probability outputs.
RELATION_ORDER = (
    RelationType.TRANSLATIONAL,
    RelationType.ROTATIONAL,
    RelationType.REFLECTIVE,
    RelationType.ADJACENT,
)


def relation_label_vector(types) -> np.ndarray:
    return np.array([1.0 if t in types else 0.0 for t in RELATION_ORDER])


def probs_to_types(probs: np.ndarray, threshold: float = EDGE_KEEP_THRESHOLD):
    return frozenset(t for t, p in zip(RELATION_ORDER, probs) if p > threshold)


@dataclass
class ShapeContext:
    """Per-hierarchy constants reused across forward passes."""

    points: np.ndarray
    segments: list
    hierarchy: Hierarchy
    shape_diag: float
    node_centroid: dict
    node_extents: dict
    node_points: dict  # node id -> (k, 3) array
    leaf_onehot: dict

    @staticmethod
    def build(points: np.ndarray, segments, taxonomy: Taxonomy, hierarchy: Optional[Hierarchy] = None) -> "ShapeContext":
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        segments = list(segments)
        h = hierarchy if hierarchy is not None else build_hierarchy(segments, taxonomy, points)
        diag = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0))) or 1.0
        node_points = {}
        node_centroid = {}
        node_extents = {}
        for i in sorted(h.nodes):
            pts = points[h.nodes[i].sorted_indices()]
            node_points[i] = pts
            centroid, extents = node_geometry(pts)
            node_centroid[i] = centroid
            node_extents[i] = extents
        onehots = {}
        for leaf in h.leaves():
            v = np.zeros(len(taxonomy))
            v[taxonomy.label_index(h.nodes[leaf].semantic)] = 1.0
            onehots[leaf] = v
        return ShapeContext(points, segments, h, diag, node_centroid, node_extents, node_points, onehots)


@dataclass
class ForwardResult:
    """Differentiable tensors produced by one structure-inference pass."""

    context: ShapeContext
    leaf_feats: dict
    x_root: Tensor
    ctx_feats: dict
    updated_feats: dict
    box_preds: dict  # node id -> BoxPrediction
    edge_probs: dict  # (a, b) with a < b -> Tensor(4)

    def predicted_relations(self, threshold: float = EDGE_KEEP_THRESHOLD) -> list:
        out = []
        for (a, b), probs in sorted(self.edge_probs.items()):
            types = probs_to_types(probs.data, threshold)
            if types:
                out.append(Relation(a, b, types))
        return out

    def apply_to_hierarchy(self, threshold: float = EDGE_KEEP_THRESHOLD) -> Hierarchy:
        """Write decoded boxes, features, and predicted relations onto the tree."""
        h = self.context.hierarchy
        for i, pred in self.box_preds.items():
            h.set_box(i, pred.as_box())
        for i, feat in self.updated_feats.items():
            h.set_feature(i, feat.data)
        h.relations = self.predicted_relations(threshold)
        return h


def forward_structure(ctx: ShapeContext, params: ModelParams, edge_threshold: float = EDGE_KEEP_THRESHOLD) -> ForwardResult:
    """Bottom-up encoding, top-down context, per-subset relation
    classification and message passing, and box decoding for every node."""
    h = ctx.hierarchy

    feats = {}
    for leaf in h.leaves():
        feats[leaf] = encode_part(ctx.node_points[leaf], params)
    for node in sorted(h.internal(), key=h.depth_of, reverse=True):
        feats[node] = aggregate_children([feats[c] for c in h.children[node]], params)
    x_root = feats[h.root]

    ctx_feats = {h.root: x_root}
    for node in sorted(h.nodes, key=h.depth_of):
        if node == h.root:
            continue
        parent = h.parent_of[node]
        ctx_feats[node] = inject_parent_context(feats[node], ctx_feats[parent], params)

    edge_probs = {}
    updated = {h.root: ctx_feats[h.root]}
    for parent, kids in h.subsets():
        kids = sorted(kids)
        sub_feats = {i: ctx_feats[i] for i in kids}
        kept = []
        for ai in range(len(kids)):
            for bi in range(ai + 1, len(kids)):
                a, b = kids[ai], kids[bi]
                probs, y = classify_relations(ctx_feats[a], ctx_feats[b], params)
                edge_probs[(a, b)] = probs
                if bool(np.any(probs.data > edge_threshold)):
                    kept.append((a, b, y))
        for i, feat in message_pass(sub_feats, kept, params).items():
            updated[i] = feat

    box_preds = {}
    for node in sorted(h.nodes):
        box_preds[node] = decode_box(
            updated[node], params, ctx.node_centroid[node], ctx.node_extents[node], ctx.shape_diag
        )
    return ForwardResult(ctx, feats, x_root, ctx_feats, updated, box_preds, edge_probs)


def correspondence_by_points(pred: Hierarchy, gt: Hierarchy) -> dict:
    """Node map keyed by identical point sets and labels (clean training data)."""
    gt_lookup = {(gt.nodes[i].point_indices, gt.nodes[i].semantic): i for i in gt.nodes}
    mapping = {}
    for i in pred.nodes:
        key = (pred.nodes[i].point_indices, pred.nodes[i].semantic)
        if key in gt_lookup:
            mapping[i] = gt_lookup[key]
    return mapping


def candidate_pairs(fwd: ForwardResult, iou_threshold: float) -> CandidateMatrix:
    """Conflict candidates from the currently decoded leaf boxes."""
    h = fwd.context.hierarchy
    for leaf in h.leaves():
        h.set_box(leaf, fwd.box_preds[leaf].as_box())
    return detect_conflicts(h, iou_threshold)


def score_candidates(fwd: ForwardResult, pairs, params: ModelParams) -> list:
    """(source, target, score Tensor) for each candidate pair."""
    ctx = fwd.context
    out = []
    for src, tgt in pairs:
        score = merge_score(
            ctx.node_points[src],
            ctx.leaf_onehot[src],
            fwd.updated_feats[src],
            ctx.node_points[tgt],
            ctx.leaf_onehot[tgt],
            fwd.updated_feats[tgt],
            fwd.x_root,
            params,
        )
        out.append((src, tgt, score))
    return out


def rule_based_structure(points: np.ndarray, segments, taxonomy: Taxonomy) -> Hierarchy:
    """The PCA baseline: hierarchy construction plus PCA boxes, no relations."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    h = build_hierarchy(segments, taxonomy, points)
    for i in sorted(h.nodes):
        h.set_box(i, pca_obb(points[h.nodes[i].sorted_indices()]))
    h.relations = []
    return h


@dataclass
class PipelineOutput:
    """End-to-end result: inferred structure, merge decisions, refined output."""

    pre_hierarchy: Hierarchy
    pre_segments: list
    candidates: CandidateMatrix
    decisions: list
    post_hierarchy: Hierarchy
    post_segments: list


def run_pipeline(
    points: np.ndarray,
    segments,
    taxonomy: Taxonomy,
    params: ModelParams,
    iou_threshold: float = 0.09,
    merge_threshold: float = 0.7,
    edge_threshold: float = EDGE_KEEP_THRESHOLD,
) -> PipelineOutput:
    """Structure inference, conflict-driven merge prediction, refinement, and
    re-inference on the refined segmentation."""
    ctx = ShapeContext.build(points, segments, taxonomy)
    fwd = forward_structure(ctx, params, edge_threshold)
    pre_h = fwd.apply_to_hierarchy(edge_threshold)

    candidates = candidate_pairs(fwd, iou_threshold)
    scored = score_candidates(fwd, candidates.pairs(), params)
    decisions = [
        MergeDecision.from_score(s, t, float(score.data), merge_threshold) for s, t, score in scored
    ]

    if any(d.applied for d in decisions):
        post_segments, _ = apply_merges(points, segments, pre_h, decisions, taxonomy, merge_threshold)
        post_ctx = ShapeContext.build(points, post_segments, taxonomy)
        post_fwd = forward_structure(post_ctx, params, edge_threshold)
        post_h = post_fwd.apply_to_hierarchy(edge_threshold)
    else:
        post_segments = list(segments)
        post_h = pre_h
    return PipelineOutput(pre_h, list(segments), candidates, decisions, post_h, post_segments)
