"""Toy training loop: alternating structure-inference epochs (total loss) and
segmentation-refinement epochs (merge loss), with per-epoch held-out metrics.

Training is single-threaded and fully deterministic for a fixed seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import NumericError, ParseError
from ..metrics import edge_error, part_ap, segmentation_map_pooled
from ..structure import Segment, Taxonomy
from .autodiff import Tensor, backward
from .losses import box_loss, edge_loss, merge_loss, norm_loss, total_loss
from .optim import Adam
from .params import ModelParams
from .pipeline import (
    ShapeContext,
    candidate_pairs,
    correspondence_by_points,
    forward_structure,
    relation_label_vector,
    run_pipeline,
    score_candidates,
)


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 15
    batch_size: int = 16
    lr: float = 0.5e-3
    refine_lr: float = 1e-4
    lr_decay: float = 0.8
    lr_decay_every: int = 500
    iou_threshold: float = 0.09
    merge_threshold: float = 0.7
    edge_threshold: float = 0.5
    eval_subset: int = 24  # held-out shapes used for the per-epoch curves
    data_dir: str = ""  # dataset directory (CLI --data overrides)

    @staticmethod
    def from_file(path) -> "TrainConfig":
        path = str(path)
        if path.endswith(".toml"):
            try:
                import tomllib  # py311+
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(path, "rb") as f:
                obj = tomllib.load(f)
        else:
            with open(path, "r", encoding="utf-8") as f:
                try:
                    obj = json.load(f)
                except json.JSONDecodeError as e:
                    raise ParseError(f"{path}: not valid JSON ({e})") from e
        known = {f for f in TrainConfig.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ParseError(f"{path}: unknown config fields {sorted(unknown)}")
        return TrainConfig(**obj)

    def to_json(self) -> dict:
        return asdict(self)


def gt_leaf_segments(record) -> list:
    """The clean (true-part) segmentation derived from the gt hierarchy."""
    h = record.gt_hierarchy
    return [Segment(h.nodes[l].point_indices, h.nodes[l].semantic) for l in h.leaves()]


@dataclass
class _Bundle:
    record: object
    clean_ctx: ShapeContext
    inst_ctx: ShapeContext
    gt_merge_set: set


def prepare_bundles(records, taxonomy: Taxonomy) -> list:
    bundles = []
    for record in records:
        pts = record.cloud.points
        clean_ctx = ShapeContext.build(pts, gt_leaf_segments(record), taxonomy)
        if record.gt_merges:
            inst_ctx = ShapeContext.build(pts, record.cloud.segments(), taxonomy)
            merge_set = set()
            for s, t in record.gt_merges:
                merge_set.add((s, t))
                merge_set.add((t, s))
        else:
            inst_ctx = clean_ctx
            merge_set = set()
        bundles.append(_Bundle(record, clean_ctx, inst_ctx, merge_set))
    return bundles


def structure_loss(fwd, gt_hierarchy) -> Tensor:
    """Total loss of one shape against its true structure.

    Training runs on the clean segmentation, so nodes correspond by identical
    point sets; boxes and the orientation surrogate are supervised on every
    matched node and relation BCE on every sibling pair.
    """
    mapping = correspondence_by_points(fwd.context.hierarchy, gt_hierarchy)
    box_terms = []
    norm_terms = []
    for node in sorted(fwd.box_preds):
        g = mapping.get(node)
        if g is None or gt_hierarchy.nodes[g].box is None:
            continue
        gt_box = gt_hierarchy.nodes[g].box
        box_terms.append(box_loss(fwd.box_preds[node], gt_box))
        norm_terms.append(norm_loss(fwd.box_preds[node].quat, gt_box))

    gt_rel = {}
    for r in gt_hierarchy.relations:
        gt_rel[(min(r.a, r.b), max(r.a, r.b))] = r.types
    probs = []
    labels = []
    for (a, b), p in sorted(fwd.edge_probs.items()):
        ga = mapping.get(a)
        gb = mapping.get(b)
        if ga is None or gb is None:
            continue
        types = gt_rel.get((min(ga, gb), max(ga, gb)), frozenset())
        probs.append(p)
        labels.append(relation_label_vector(types))

    def _mean(terms):
        if not terms:
            return Tensor(0.0)
        acc = terms[0]
        for t in terms[1:]:
            acc = acc + t
        return acc * (1.0 / len(terms))

    return total_loss(_mean(box_terms), _mean(norm_terms), edge_loss(probs, labels))


def refinement_loss(fwd, gt_merge_set, params: ModelParams, iou_threshold: float):
    """Focal merge loss over the current conflict candidates (None when none).

    Structure features enter the merge networks as constants so refinement
    epochs never move the structure net (the two networks train separately).
    """
    cands = candidate_pairs(fwd, iou_threshold)
    if not cands.entries:
        return None, 0
    detached = _detach_features(fwd)
    scored = score_candidates(detached, cands.pairs(), params)
    return merge_loss(scored, gt_merge_set), len(cands.entries)


def _detach_features(fwd):
    class _View:
        pass

    view = _View()
    view.context = fwd.context
    view.x_root = Tensor(fwd.x_root.data.copy())
    view.updated_feats = {i: Tensor(t.data.copy()) for i, t in fwd.updated_feats.items()}
    return view


def merge_decision_stats(out, gt_merge_set, merge_threshold: float):
    """(correct, total) for candidate classification; gt pairs the conflict
    detector never surfaced count as errors."""
    correct = 0
    seen_pairs = set()
    for d in out.decisions:
        label = (d.source, d.target) in gt_merge_set
        if d.applied == label:
            correct += 1
        seen_pairs.add((d.source, d.target))
        seen_pairs.add((d.target, d.source))
    missed = {p for p in gt_merge_set if p not in seen_pairs}
    # a merge pair is one undirected gt merge; count each once
    missed_undirected = {tuple(sorted(p)) for p in missed}
    total = len(out.decisions) + len(missed_undirected)
    return correct, total


def evaluate_pipeline(records, params: ModelParams, taxonomy: Taxonomy, config: TrainConfig) -> dict:
    """Pipeline metrics on a record list: post-refinement AP/EE, merge
    accuracy, and pooled segmentation mAP before and after refinement."""
    per_shape = []
    merge_correct = 0
    merge_total = 0
    pre_entries = []
    post_entries = []
    for idx, record in enumerate(records):
        segments = record.cloud.segments()
        out = run_pipeline(
            record.cloud.points,
            segments,
            taxonomy,
            params,
            iou_threshold=config.iou_threshold,
            merge_threshold=config.merge_threshold,
            edge_threshold=config.edge_threshold,
        )
        gt_h = record.gt_hierarchy
        ap = part_ap(out.post_hierarchy, gt_h)
        ee = edge_error(out.post_hierarchy, gt_h)
        gt_merge_set = set()
        if record.gt_merges:
            for s, t in record.gt_merges:
                gt_merge_set.add((s, t))
                gt_merge_set.add((t, s))
        c, t = merge_decision_stats(out, gt_merge_set, config.merge_threshold)
        merge_correct += c
        merge_total += t
        gt_segments = gt_leaf_segments(record)
        pre_entries.append((segments, gt_segments))
        post_entries.append((out.post_segments, gt_segments))
        per_shape.append(
            {
                "index": idx,
                "category": record.category,
                "ap_25": ap,
                "edge_error": ee,
                "n_candidates": len(out.candidates.entries),
                "n_applied": sum(1 for d in out.decisions if d.applied),
            }
        )
    n = len(per_shape)
    _, map_pre = segmentation_map_pooled(pre_entries)
    _, map_post = segmentation_map_pooled(post_entries)
    return {
        "ap_25": math.fsum(s["ap_25"] for s in per_shape) / n if n else 0.0,
        "edge_error": math.fsum(s["edge_error"] for s in per_shape) / n if n else 0.0,
        "merge_accuracy": merge_correct / merge_total if merge_total else 1.0,
        "map_pre": map_pre,
        "map_post": map_post,
        "per_shape": per_shape,
    }


def evaluate_rule_based(records, taxonomy: Taxonomy) -> dict:
    """Part AP of the PCA baseline (no relations, no refinement)."""
    from .pipeline import rule_based_structure

    aps = []
    for record in records:
        h = rule_based_structure(record.cloud.points, record.cloud.segments(), taxonomy)
        aps.append(part_ap(h, record.gt_hierarchy))
    return {"ap_25": math.fsum(aps) / len(aps) if aps else 0.0}


def _batches(indices, size):
    for start in range(0, len(indices), size):
        yield indices[start : start + size]


def train_toy(train_records, heldout_records, taxonomy: Taxonomy, config: TrainConfig):
    """Train both networks on toy records; returns (params, per-epoch curves).

    Structure epochs fit boxes and relations on the clean segmentation;
    refinement epochs fit merge prediction on the over-segmented instances.
    Identical seeds give bit-identical trajectories.
    """
    rng = np.random.default_rng(config.seed)
    params = ModelParams.init(num_labels=len(taxonomy), seed=config.seed)
    bundles = prepare_bundles(train_records, taxonomy)
    opt_structure = Adam(
        params, lr=config.lr, decay=config.lr_decay, decay_every=config.lr_decay_every
    )
    opt_refine = Adam(
        params, lr=config.refine_lr, decay=config.lr_decay, decay_every=config.lr_decay_every
    )
    eval_records = list(heldout_records[: config.eval_subset])

    curves = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(bundles))
        epoch_structure_loss = 0.0
        n_struct_batches = 0
        for batch in _batches(order.tolist(), config.batch_size):
            opt_structure.zero_grad()
            loss = None
            for bi in batch:
                b = bundles[bi]
                fwd = forward_structure(b.clean_ctx, params, config.edge_threshold)
                term = structure_loss(fwd, b.record.gt_hierarchy)
                loss = term if loss is None else loss + term
            loss = loss * (1.0 / len(batch))
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(
                    f"structure loss became {value} at epoch {epoch}, batch shapes {batch}"
                )
            backward(loss)
            opt_structure.step()
            epoch_structure_loss += value
            n_struct_batches += 1

        order = rng.permutation(len(bundles))
        epoch_merge_loss = 0.0
        n_merge_batches = 0
        for batch in _batches(order.tolist(), config.batch_size):
            opt_refine.zero_grad()
            loss = None
            n_terms = 0
            for bi in batch:
                b = bundles[bi]
                fwd = forward_structure(b.inst_ctx, params, config.edge_threshold)
                term, n_cands = refinement_loss(fwd, b.gt_merge_set, params, config.iou_threshold)
                if term is None:
                    continue
                loss = term if loss is None else loss + term
                n_terms += n_cands
            if loss is None:
                continue
            loss = loss * (1.0 / n_terms)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(
                    f"merge loss became {value} at epoch {epoch}, batch shapes {batch}"
                )
            backward(loss)
            opt_refine.step()
            epoch_merge_loss += value
            n_merge_batches += 1

        entry = {
            "epoch": epoch,
            "structure_loss": epoch_structure_loss / max(n_struct_batches, 1),
            "merge_loss": epoch_merge_loss / max(n_merge_batches, 1),
        }
        if eval_records:
            snapshot = evaluate_pipeline(eval_records, params, taxonomy, config)
            entry.update(
                {
                    "ap_25": snapshot["ap_25"],
                    "edge_error": snapshot["edge_error"],
                    "merge_accuracy": snapshot["merge_accuracy"],
                }
            )
        curves.append(entry)
    return params, curves


def write_curves_csv(curves, path):
    if not curves:
        return
    keys = list(curves[0])
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(keys) + "\n")
        for row in curves:
            f.write(",".join(repr(row.get(k, "")) for k in keys) + "\n")
