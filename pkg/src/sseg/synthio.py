"""Synthetic toy shapes with ground-truth structure, controlled
over-segmentation with ground-truth merges, and all file formats.

Generation and IO are pure given (seed, config); datasets shard by giving
each record its own derived seed.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParseError
from .geom import OrientedBox, UnitQuaternion, Vec3
from .structure import (
    Hierarchy,
    PartNode,
    Relation,
    RelationType,
    Segment,
    Taxonomy,
    build_hierarchy,
    relation_ground_truth,
)

CATEGORIES = ("toy-chair", "toy-table", "toy-storage")

# Geometric tolerance for ground-truth relation predicates, in units of the
# normalized (unit-diagonal) shape.
RELATION_TOL = 0.02

# One label tree covering all toy categories so a single model and label
# space serve every shape; labels are globally unique.
TOY_TAXONOMY = Taxonomy.from_json(
    {
        "label": "shape",
        "children": [
            {
                "label": "chair",
                "children": [
                    {"label": "chair_base", "children": [{"label": "chair_leg"}]},
                    {"label": "chair_seat"},
                    {"label": "chair_back"},
                    {
                        "label": "chair_arm_unit",
                        "multi_instance": True,
                        "children": [{"label": "chair_arm"}],
                    },
                ],
            },
            {
                "label": "table",
                "children": [
                    {"label": "table_base", "children": [{"label": "table_leg"}]},
                    {"label": "table_top"},
                ],
            },
            {
                "label": "storage",
                "children": [
                    {
                        "label": "storage_frame",
                        "children": [
                            {"label": "storage_side"},
                            {"label": "storage_top"},
                            {"label": "storage_bottom"},
                            {"label": "storage_back"},
                        ],
                    },
                    {"label": "storage_shelf"},
                ],
            },
        ],
    }
)


@dataclass(frozen=True)
class NoiseConfig:
    """Point jitter and over-segmentation controls for the generators.

    The default jitter is large enough that PCA boxes of thin parts
    occasionally fall below the 0.25 IoU bar (the width a learned box
    decoder recovers by calibrating its extents)."""

    jitter: float = 0.01  # gaussian sigma as a fraction of the shape diagonal
    oversample_prob: float = 0.0  # probability that one part is split in two
    split_noise: float = 0.2  # boundary noise of the split, fraction of part extent


@dataclass
class LabeledCloud:
    """Points with per-point semantic labels and instance ids."""

    points: np.ndarray  # (N, 3) float64
    semantics: list  # N semantic labels (strings)
    instances: np.ndarray  # (N,) int64
    normalized: bool = False

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.instances = np.asarray(self.instances, dtype=np.int64).reshape(-1)
        self.semantics = list(self.semantics)
        n = self.points.shape[0]
        if n < 1:
            raise ParseError("cloud must contain at least one point")
        if len(self.semantics) != n or self.instances.shape[0] != n:
            raise ParseError("points, semantics, and instances must share one length")

    def n_points(self) -> int:
        return self.points.shape[0]

    def instance_ids(self) -> list:
        return sorted(set(self.instances.tolist()))

    def segments(self) -> list:
        """One Segment per instance id, ascending."""
        out = []
        for inst in self.instance_ids():
            idx = np.nonzero(self.instances == inst)[0]
            label = self.semantics[int(idx[0])]
            out.append(Segment(frozenset(idx.tolist()), label))
        return out

    def normalize(self) -> "LabeledCloud":
        """Center the AABB at the origin and scale its diagonal to 1 (idempotent)."""
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        center = (lo + hi) / 2.0
        diag = float(np.linalg.norm(hi - lo))
        if diag <= 0:
            diag = 1.0
        return LabeledCloud(
            (self.points - center) / diag,
            list(self.semantics),
            self.instances.copy(),
            normalized=True,
        )


@dataclass
class ShapeRecord:
    """A cloud, its true part structure, and (optionally) the true merges.

    The cloud's instance ids are the pipeline input (the segmentation
    backbone's output); gt_merges reference those instance ids. The true
    hierarchy's leaves partition the points and may span two instances when
    over-segmentation split a part.
    """

    cloud: LabeledCloud
    gt_hierarchy: Hierarchy
    gt_merges: Optional[list] = None  # [(source instance, target instance), ...]
    category: Optional[str] = None


@dataclass(frozen=True)
class _Part:
    label: str
    center: np.ndarray
    size: np.ndarray


def _sample_cuboid_surface(rng, center, size, n: int) -> np.ndarray:
    """n points uniform on the surface of an axis-aligned cuboid."""
    w, h, d = size
    areas = np.array([h * d, h * d, w * d, w * d, w * h, w * h], dtype=np.float64)
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=n)
    v = rng.uniform(-0.5, 0.5, size=n)
    pts = np.empty((n, 3))
    for k in range(n):
        f = faces[k]
        axis = f // 2
        sign = 1.0 if f % 2 == 0 else -1.0
        p = np.empty(3)
        p[axis] = sign * size[axis] / 2.0
        others = [a for a in range(3) if a != axis]
        p[others[0]] = u[k] * size[others[0]]
        p[others[1]] = v[k] * size[others[1]]
        pts[k] = p
    return pts + center


def _chair_parts(rng) -> list:
    # spread_x strictly exceeds spread_z so the widest-spread axis (the
    # reflection plane of the relation predicates) is stable across shapes
    leg_h = rng.uniform(0.32, 0.5)
    leg_t = rng.uniform(0.05, 0.09)
    spread_x = rng.uniform(0.3, 0.44)
    spread_z = rng.uniform(0.18, 0.28)
    seat_t = rng.uniform(0.05, 0.09)
    seat_w = 2 * spread_x + 2 * leg_t
    seat_d = 2 * spread_z + 2 * leg_t
    back_h = rng.uniform(0.35, 0.6)
    back_t = rng.uniform(0.05, 0.08)

    parts = []
    for sx in (-1, 1):
        for sz in (-1, 1):
            parts.append(
                _Part(
                    "chair_leg",
                    np.array([sx * spread_x, leg_h / 2, sz * spread_z]),
                    np.array([leg_t, leg_h, leg_t]),
                )
            )
    parts.append(_Part("chair_seat", np.array([0.0, leg_h + seat_t / 2, 0.0]), np.array([seat_w, seat_t, seat_d])))
    parts.append(
        _Part(
            "chair_back",
            np.array([0.0, leg_h + seat_t + back_h / 2, -(seat_d - back_t) / 2]),
            np.array([seat_w, back_h, back_t]),
        )
    )
    if rng.random() < 0.35:
        arm_h = rng.uniform(0.15, 0.22)
        arm_t = rng.uniform(0.05, 0.07)
        for sx in (-1, 1):
            parts.append(
                _Part(
                    "chair_arm",
                    np.array([sx * (seat_w / 2 - arm_t / 2), leg_h + seat_t + arm_h / 2, 0.0]),
                    np.array([arm_t, arm_h, seat_d * 0.8]),
                )
            )
    return parts


def _table_parts(rng) -> list:
    leg_h = rng.uniform(0.4, 0.6)
    leg_t = rng.uniform(0.05, 0.09)
    top_t = rng.uniform(0.05, 0.08)
    n_legs = 3 if rng.random() < 0.35 else 4
    parts = []
    if n_legs == 4:
        spread_x = rng.uniform(0.34, 0.5)
        spread_z = rng.uniform(0.2, 0.3)
        for sx in (-1, 1):
            for sz in (-1, 1):
                parts.append(
                    _Part(
                        "table_leg",
                        np.array([sx * spread_x, leg_h / 2, sz * spread_z]),
                        np.array([leg_t, leg_h, leg_t]),
                    )
                )
        top_w = 2 * spread_x + rng.uniform(0.15, 0.3)
        top_d = 2 * spread_z + rng.uniform(0.15, 0.3)
    else:
        # isosceles placement: two front legs mirrored in x plus one rear leg
        sx = rng.uniform(0.3, 0.42)
        zf = rng.uniform(0.1, 0.14)
        for px, pz in ((-sx, zf), (sx, zf), (0.0, -2 * zf)):
            parts.append(
                _Part(
                    "table_leg",
                    np.array([px, leg_h / 2, pz]),
                    np.array([leg_t, leg_h, leg_t]),
                )
            )
        top_w = 2 * sx + rng.uniform(0.12, 0.25)
        top_d = 4 * zf + rng.uniform(0.15, 0.3)
    parts.append(_Part("table_top", np.array([0.0, leg_h + top_t / 2, 0.0]), np.array([top_w, top_t, top_d])))
    return parts


def _storage_parts(rng) -> list:
    # height strictly exceeds width so the frame's widest-spread axis stays y
    w = rng.uniform(0.55, 0.78)
    h = rng.uniform(0.85, 1.2)
    d = rng.uniform(0.3, 0.45)
    t = rng.uniform(0.05, 0.08)
    n_shelves = int(rng.integers(1, 5))
    parts = []
    for sx in (-1, 1):
        parts.append(_Part("storage_side", np.array([sx * (w - t) / 2, 0.0, 0.0]), np.array([t, h, d])))
    parts.append(_Part("storage_top", np.array([0.0, (h - t) / 2, 0.0]), np.array([w - 2 * t, t, d])))
    parts.append(_Part("storage_bottom", np.array([0.0, -(h - t) / 2, 0.0]), np.array([w - 2 * t, t, d])))
    parts.append(_Part("storage_back", np.array([0.0, 0.0, -(d - t) / 2]), np.array([w - 2 * t, h - 2 * t, t])))
    inner_h = h - 2 * t
    for k in range(n_shelves):
        y = -inner_h / 2 + (k + 1) * inner_h / (n_shelves + 1)
        parts.append(
            _Part(
                "storage_shelf",
                np.array([0.0, y, t / 2]),
                np.array([w - 2 * t, t, d - t]),
            )
        )
    return parts


_PART_SAMPLERS = {
    "toy-chair": _chair_parts,
    "toy-table": _table_parts,
    "toy-storage": _storage_parts,
}

_POINT_BUDGET = 460
_MIN_PART_POINTS = 28
_SPLIT_MIN_POINTS = 56


def _aabb_box(children_boxes) -> OrientedBox:
    los = [b.translation.as_array() - b.scale.as_array() / 2 for b in children_boxes]
    his = [b.translation.as_array() + b.scale.as_array() / 2 for b in children_boxes]
    lo = np.min(los, axis=0)
    hi = np.max(his, axis=0)
    return OrientedBox(
        Vec3.from_array((lo + hi) / 2),
        Vec3.from_array(np.maximum(hi - lo, 1e-6)),
        UnitQuaternion.identity(),
    )


def _fill_internal_boxes(h: Hierarchy):
    for node_id in sorted(h.internal(), key=h.depth_of, reverse=True):
        kid_boxes = [h.nodes[c].box for c in h.children[node_id]]
        h.set_box(node_id, _aabb_box(kid_boxes))


def gen_shape(category: str, seed: int, noise: NoiseConfig = NoiseConfig()) -> ShapeRecord:
    """One seed-deterministic toy shape with full ground-truth structure.

    Surface-samples every part cuboid, optionally splits one part with a
    noisy boundary (recording the merge that undoes it), normalizes to a
    unit-diagonal cloud, and derives boxes and relations for the true tree.
    """
    if category not in _PART_SAMPLERS:
        raise ParseError(f"unknown category {category!r}; expected one of {CATEGORIES}")
    rng = np.random.default_rng(seed)
    parts = _PART_SAMPLERS[category](rng)

    areas = np.array([2 * (p.size[0] * p.size[1] + p.size[1] * p.size[2] + p.size[0] * p.size[2]) for p in parts])
    counts = np.maximum((_POINT_BUDGET * areas / areas.sum()).astype(int), _MIN_PART_POINTS)

    all_points = []
    instances = []
    semantics = []
    for k, part in enumerate(parts):
        pts = _sample_cuboid_surface(rng, part.center, part.size, int(counts[k]))
        all_points.append(pts)
        instances.extend([k] * pts.shape[0])
        semantics.extend([part.label] * pts.shape[0])
    points = np.concatenate(all_points)
    instances = np.asarray(instances, dtype=np.int64)

    world_lo = points.min(axis=0)
    world_hi = points.max(axis=0)
    world_diag = float(np.linalg.norm(world_hi - world_lo))
    if noise.jitter > 0:
        points = points + rng.normal(0.0, noise.jitter * world_diag, size=points.shape)

    gt_merges = None
    if noise.oversample_prob > 0 and rng.random() < noise.oversample_prob:
        eligible = [k for k in range(len(parts)) if counts[k] >= _SPLIT_MIN_POINTS]
        if eligible:
            k = int(rng.choice(eligible))
            idx = np.nonzero(instances == k)[0]
            part_pts = points[idx]
            axis = int(np.argmax(parts[k].size))
            mid = float(parts[k].center[axis])
            wobble = rng.normal(0.0, noise.split_noise * parts[k].size[axis], size=idx.shape[0])
            side_b = part_pts[:, axis] + wobble > mid
            # keep both fragments big enough to carry a box
            if 8 <= int(side_b.sum()) <= idx.shape[0] - 8:
                new_id = int(instances.max()) + 1
                instances = instances.copy()
                instances[idx[side_b]] = new_id
                # source: the new fragment; target: the remaining original slot
                gt_merges = [(new_id, k)]

    cloud = LabeledCloud(points, semantics, instances).normalize()

    lo = points.min(axis=0)
    hi = points.max(axis=0)
    center = (lo + hi) / 2.0
    diag = float(np.linalg.norm(hi - lo))

    # the true segments regroup any split fragment with its original part
    true_part_of_instance = {k: k for k in range(len(parts))}
    if gt_merges:
        src, tgt = gt_merges[0]
        true_part_of_instance[src] = tgt
    true_index_sets = {k: set() for k in range(len(parts))}
    for i, inst in enumerate(instances.tolist()):
        true_index_sets[true_part_of_instance[inst]].add(i)
    gt_segments = [Segment(frozenset(true_index_sets[k]), parts[k].label) for k in range(len(parts))]

    gt_h = build_hierarchy(gt_segments, TOY_TAXONOMY, cloud.points)
    for leaf, part in zip(gt_h.leaves(), parts):
        box = OrientedBox(
            Vec3.from_array((part.center - center) / diag),
            Vec3.from_array(np.maximum(part.size / diag, 1e-6)),
            UnitQuaternion.identity(),
        )
        gt_h.set_box(leaf, box)
    _fill_internal_boxes(gt_h)
    relation_ground_truth(gt_h, RELATION_TOL)

    return ShapeRecord(cloud=cloud, gt_hierarchy=gt_h, gt_merges=gt_merges, category=category)


def gen_dataset(category: str, count: int, seed: int, noise: NoiseConfig = NoiseConfig()) -> list:
    """`count` records with per-record seeds derived from `seed` (shardable)."""
    return [gen_shape(category, seed * 1_000_003 + i, noise) for i in range(count)]


def perturbed_copy(record: ShapeRecord, seed: int, amount: float = 0.05) -> ShapeRecord:
    """Structure-preserving geometric perturbation (anisotropic rescale).

    The axis ratios change by at least `amount`, so the perturbation survives
    the re-normalization (a uniform rescale would cancel out).
    """
    rng = np.random.default_rng(seed)
    stretch = rng.uniform(amount / 2, amount, size=2)
    factors = np.array([1.0 + stretch[0], 1.0 - stretch[1], 1.0 + rng.uniform(-amount, amount) / 2])
    cloud = LabeledCloud(
        record.cloud.points * factors,
        list(record.cloud.semantics),
        record.cloud.instances.copy(),
    ).normalize()
    lo = (record.cloud.points * factors).min(axis=0)
    hi = (record.cloud.points * factors).max(axis=0)
    center = (lo + hi) / 2
    diag = float(np.linalg.norm(hi - lo))

    gt = record.gt_hierarchy
    nodes = {}
    for i, node in gt.nodes.items():
        box = node.box
        new_box = None
        if box is not None:
            new_box = OrientedBox(
                Vec3.from_array((box.translation.as_array() * factors - center) / diag),
                Vec3.from_array(np.maximum(box.scale.as_array() * np.abs(factors) / diag, 1e-6)),
                box.rotation,
            )
        nodes[i] = PartNode(i, node.semantic, node.point_indices, box=new_box)
    new_h = Hierarchy(nodes=nodes, children=dict(gt.children), root=gt.root)
    relation_ground_truth(new_h, RELATION_TOL)
    return ShapeRecord(cloud=cloud, gt_hierarchy=new_h, gt_merges=record.gt_merges, category=record.category)


def without_parts(record: ShapeRecord, labels) -> ShapeRecord:
    """Drop every leaf whose label is in `labels`, keeping coordinates as-is.

    The cloud is not re-normalized so the remaining geometry stays put (the
    adversarial retrieval fixture: structure changes, geometry barely does).
    """
    labels = set(labels)
    keep_mask = np.array([s not in labels for s in record.cloud.semantics])
    if not keep_mask.any():
        raise ParseError("cannot drop every part of a shape")
    old_to_new = np.cumsum(keep_mask) - 1
    points = record.cloud.points[keep_mask]
    semantics = [s for s, k in zip(record.cloud.semantics, keep_mask) if k]
    old_instances = record.cloud.instances[keep_mask]
    remap = {}
    instances = np.empty(old_instances.shape[0], dtype=np.int64)
    for i, inst in enumerate(old_instances.tolist()):
        if inst not in remap:
            remap[inst] = len(remap)
        instances[i] = remap[inst]
    cloud = LabeledCloud(points, semantics, instances, normalized=record.cloud.normalized)

    gt = record.gt_hierarchy
    segments = []
    for leaf in gt.leaves():
        node = gt.nodes[leaf]
        if node.semantic in labels:
            continue
        idx = node.sorted_indices()
        kept = [int(old_to_new[i]) for i in idx if keep_mask[i]]
        segments.append(Segment(frozenset(kept), node.semantic))
    new_h = build_hierarchy(segments, TOY_TAXONOMY, points)
    for leaf, seg in zip(new_h.leaves(), segments):
        # reuse the nearest original leaf box of the same semantic
        new_h.set_box(leaf, _nearest_box_by_centroid(gt, seg, points))
    _fill_internal_boxes(new_h)
    relation_ground_truth(new_h, RELATION_TOL)
    return ShapeRecord(cloud=cloud, gt_hierarchy=new_h, gt_merges=None, category=record.category)


def _nearest_box_by_centroid(gt: Hierarchy, seg: Segment, points: np.ndarray) -> OrientedBox:
    centroid = points[seg.sorted_indices()].mean(axis=0)
    best = None
    best_d = np.inf
    for leaf in gt.leaves():
        node = gt.nodes[leaf]
        if node.semantic != seg.semantic or node.box is None:
            continue
        d = float(np.linalg.norm(node.box.translation.as_array() - centroid))
        if d < best_d:
            best_d = d
            best = node.box
    return best


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def _box_to_json(box: Optional[OrientedBox]):
    if box is None:
        return None
    return {
        "t": box.translation.as_array().tolist(),
        "s": box.scale.as_array().tolist(),
        "q": box.rotation.as_array().tolist(),
    }


def _box_from_json(obj) -> Optional[OrientedBox]:
    if obj is None:
        return None
    try:
        return OrientedBox(Vec3(*obj["t"]), Vec3(*obj["s"]), UnitQuaternion(*obj["q"]))
    except (KeyError, TypeError) as e:
        raise ParseError(f"malformed box object: {e}") from e


def hierarchy_to_json(h: Hierarchy) -> dict:
    relations_by_node = {}
    for r in h.relations:
        parent = h.parent_of[r.a]
        relations_by_node.setdefault(parent, []).append(r)

    def build(node_id):
        node = h.nodes[node_id]
        obj = {"id": node.id, "label": node.semantic, "box": _box_to_json(node.box)}
        kids = h.children[node_id]
        if kids:
            obj["children"] = [build(c) for c in kids]
            rels = relations_by_node.get(node_id, [])
            obj["relations"] = [
                {"a": r.a, "b": r.b, "types": sorted(t.value for t in r.types)} for r in rels
            ]
        else:
            obj["point_indices"] = sorted(node.point_indices)
        return obj

    return build(h.root)


def hierarchy_from_json(obj) -> Hierarchy:
    nodes = {}
    children = {}
    relations = []

    def walk(node_obj):
        for key in ("id", "label"):
            if key not in node_obj:
                raise ParseError(f"hierarchy node missing field '{key}'")
        nid = int(node_obj["id"])
        box = _box_from_json(node_obj.get("box"))
        kid_objs = node_obj.get("children", [])
        if kid_objs:
            kid_ids = [walk(c) for c in kid_objs]
            children[nid] = tuple(kid_ids)
            indices = frozenset().union(*(nodes[c].point_indices for c in kid_ids))
            for rel in node_obj.get("relations", []):
                try:
                    types = frozenset(RelationType(t) for t in rel["types"])
                    relations.append(Relation(int(rel["a"]), int(rel["b"]), types))
                except (KeyError, ValueError) as e:
                    raise ParseError(f"malformed relation entry: {e}") from e
        else:
            if "point_indices" not in node_obj:
                raise ParseError("leaf node missing field 'point_indices'")
            children[nid] = ()
            indices = frozenset(int(i) for i in node_obj["point_indices"])
        nodes[nid] = PartNode(nid, str(node_obj["label"]), indices, box=box)
        return nid

    root = walk(obj)
    h = Hierarchy(nodes=nodes, children=children, root=root)
    h.relations = relations
    return h


def cloud_to_json(cloud: LabeledCloud) -> dict:
    return {
        "points": cloud.points.tolist(),
        "semantics": list(cloud.semantics),
        "instances": cloud.instances.tolist(),
        "normalized": bool(cloud.normalized),
    }


def cloud_from_json(obj) -> LabeledCloud:
    for key in ("points", "semantics", "instances"):
        if key not in obj:
            raise ParseError(f"cloud object missing field '{key}'")
    return LabeledCloud(
        np.asarray(obj["points"], dtype=np.float64),
        [str(s) for s in obj["semantics"]],
        np.asarray(obj["instances"], dtype=np.int64),
        normalized=bool(obj.get("normalized", False)),
    )


def save_shape(record: ShapeRecord, path):
    obj = {
        "category": record.category,
        "cloud": cloud_to_json(record.cloud),
        "hierarchy": hierarchy_to_json(record.gt_hierarchy),
        "gt_merges": [[int(s), int(t)] for s, t in record.gt_merges] if record.gt_merges else None,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f)


def load_shape(path) -> ShapeRecord:
    try:
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: not valid JSON ({e})") from e
    for key in ("cloud", "hierarchy"):
        if key not in obj:
            raise ParseError(f"{path}: shape record missing field '{key}'")
    merges = obj.get("gt_merges")
    return ShapeRecord(
        cloud=cloud_from_json(obj["cloud"]),
        gt_hierarchy=hierarchy_from_json(obj["hierarchy"]),
        gt_merges=[(int(s), int(t)) for s, t in merges] if merges else None,
        category=obj.get("category"),
    )


def save_hierarchy(h: Hierarchy, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(hierarchy_to_json(h), f)


def load_hierarchy(path) -> Hierarchy:
    try:
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: not valid JSON ({e})") from e
    return hierarchy_from_json(obj)


def write_dataset(records, out_dir, seed: int, test_fraction: float = 0.2):
    """Write records plus a manifest; every fifth record lands in the test split."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"seed": seed, "records": []}
    stride = max(int(round(1.0 / test_fraction)), 1) if test_fraction > 0 else 0
    for i, record in enumerate(records):
        name = f"shape_{i:05d}.json"
        save_shape(record, os.path.join(out_dir, name))
        split = "test" if stride and (i % stride == stride - 1) else "train"
        manifest["records"].append(
            {"path": name, "category": record.category, "split": split, "seed": seed}
        )
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1)
    with open(os.path.join(out_dir, "taxonomy.json"), "w", encoding="utf-8") as f:
        json.dump(TOY_TAXONOMY.to_json(), f, indent=1)


def load_dataset(dir_path, split: Optional[str] = None) -> list:
    """Records listed in the manifest, optionally filtered by split."""
    manifest_path = os.path.join(dir_path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ParseError(f"{dir_path}: no manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    records = []
    for entry in manifest.get("records", []):
        if split is not None and entry.get("split") != split:
            continue
        records.append(load_shape(os.path.join(dir_path, entry["path"])))
    return records


def import_partnet(cloud_path, annotation_path, taxonomy: Taxonomy) -> ShapeRecord:
    """Best-effort adapter for exports in the documented cloud/hierarchy schemas.

    Raises ParseError when labels are unknown to the taxonomy or the
    annotation does not partition the cloud; directory-level import skips
    such shapes and reports them.
    """
    with open(cloud_path, "r", encoding="utf-8") as f:
        try:
            cloud_obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"{cloud_path}: not valid JSON ({e})") from e
    cloud = cloud_from_json(cloud_obj)
    h = load_hierarchy(annotation_path)
    for node in h.nodes.values():
        if not taxonomy.contains(node.semantic):
            raise ParseError(f"{annotation_path}: unknown label {node.semantic!r}")
    covered = frozenset().union(*(h.nodes[l].point_indices for l in h.leaves()))
    if covered != frozenset(range(cloud.n_points())):
        raise ParseError(f"{annotation_path}: hierarchy leaves do not partition the cloud")
    return ShapeRecord(cloud=cloud, gt_hierarchy=h, gt_merges=None, category=None)


def import_partnet_dir(dir_path, taxonomy: Taxonomy):
    """Import every *.cloud.json / *.hier.json pair under a directory.

    Returns (records, report); invalid shapes are skipped and listed in the
    report with the failure reason.
    """
    report = {"imported": 0, "skipped": []}
    records = []
    names = sorted(f for f in os.listdir(dir_path)) if os.path.isdir(dir_path) else []
    stems = sorted({n[: -len(".cloud.json")] for n in names if n.endswith(".cloud.json")})
    if not stems:
        report["skipped"].append({"path": str(dir_path), "reason": "no *.cloud.json files found"})
        return records, report
    for stem in stems:
        cloud_path = os.path.join(dir_path, stem + ".cloud.json")
        annotation_path = os.path.join(dir_path, stem + ".hier.json")
        try:
            if not os.path.exists(annotation_path):
                raise ParseError(f"{annotation_path}: missing annotation file")
            records.append(import_partnet(cloud_path, annotation_path, taxonomy))
            report["imported"] += 1
        except ParseError as e:
            report["skipped"].append({"path": cloud_path, "reason": str(e)})
    return records, report
