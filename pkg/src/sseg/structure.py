"""Part segments, the n-ary structure tree, relation typing, and bottom-up
hierarchy construction from labeled segments.

Hierarchies are built single-threaded; once built they are read-only except
for the explicit box/feature fill-in helpers used in single-owner phases.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import EmptyShape, InvalidSegmentation, MissingGeometry, ParseError, UnknownLabel
from .geom import OrientedBox, box_gap, box_iou

MAX_SUBSET_SIZE = 10
# Relative single-linkage cut used when a multi-instance parent label has to
# be split by segment-centroid proximity (fraction of the shape diagonal).
SPATIAL_CUT_FRACTION = 0.25

FEATURE_DIM = 128


class RelationType(enum.Enum):
    TRANSLATIONAL = "translational"
    ROTATIONAL = "rotational"
    REFLECTIVE = "reflective"
    ADJACENT = "adjacent"


@dataclass(frozen=True)
class Segment:
    """A part segment: point indices into the owning cloud plus its label."""

    point_indices: frozenset
    semantic: str

    def __post_init__(self):
        if not self.point_indices:
            raise InvalidSegmentation("segment has no points")
        object.__setattr__(self, "point_indices", frozenset(int(i) for i in self.point_indices))

    def sorted_indices(self) -> np.ndarray:
        return np.fromiter(sorted(self.point_indices), dtype=np.int64)


class Relation(NamedTuple):
    a: int
    b: int
    types: frozenset  # of RelationType


@dataclass
class PartNode:
    id: int
    semantic: str
    point_indices: frozenset
    box: Optional[OrientedBox] = None
    feature: Optional[np.ndarray] = None

    def sorted_indices(self) -> np.ndarray:
        return np.fromiter(sorted(self.point_indices), dtype=np.int64)


@dataclass
class Hierarchy:
    """Rooted n-ary part tree with typed sibling relations."""

    nodes: dict  # id -> PartNode
    children: dict  # id -> tuple of child ids (leaves map to ())
    root: int
    relations: list = field(default_factory=list)  # list[Relation]

    def __post_init__(self):
        self.parent_of = {}
        for pid, kids in self.children.items():
            for c in kids:
                self.parent_of[c] = pid

    def leaves(self) -> list:
        return sorted(i for i, kids in self.children.items() if not kids)

    def internal(self) -> list:
        return sorted(i for i, kids in self.children.items() if kids)

    def depth_of(self, node_id: int) -> int:
        d = 0
        while node_id != self.root:
            node_id = self.parent_of[node_id]
            d += 1
        return d

    def nodes_by_depth(self) -> dict:
        out = {}
        for i in sorted(self.nodes):
            out.setdefault(self.depth_of(i), []).append(i)
        return out

    def subsets(self) -> list:
        """(parent id, child ids) for every internal node, sorted by parent."""
        return [(p, list(self.children[p])) for p in self.internal()]

    def set_box(self, node_id: int, box: OrientedBox):
        self.nodes[node_id].box = box

    def set_feature(self, node_id: int, feature: np.ndarray):
        feature = np.asarray(feature, dtype=np.float64).reshape(-1)
        if feature.shape[0] != FEATURE_DIM:
            raise ValueError(f"node features must have length {FEATURE_DIM}, got {feature.shape[0]}")
        self.nodes[node_id].feature = feature

    def require_leaf_boxes(self):
        for i in self.leaves():
            if self.nodes[i].box is None:
                raise MissingGeometry(f"leaf {i} has no bounding box")

    def require_all_boxes(self):
        for i in sorted(self.nodes):
            if self.nodes[i].box is None:
                raise MissingGeometry(f"node {i} has no bounding box")

    def relations_of(self, parent_id: int) -> list:
        kids = set(self.children[parent_id])
        return [r for r in self.relations if r.a in kids and r.b in kids]


class Taxonomy:
    """Rooted label tree; each label knows its parent and multi-instance flag.

    File schema: nested JSON objects {"label": str, "multi_instance": bool,
    "children": [...]}; multi_instance defaults to false and marks labels
    whose instances must be separated spatially when grouping siblings.
    """

    def __init__(self, root_label: str, parent: dict, multi_instance: dict, order: list):
        self.root_label = root_label
        self._parent = parent
        self._multi = multi_instance
        self._order = list(order)
        self._index = {lab: i for i, lab in enumerate(self._order)}

    @staticmethod
    def from_json(obj) -> "Taxonomy":
        parent, multi, order = {}, {}, []

        def walk(node, parent_label):
            if not isinstance(node, dict) or "label" not in node:
                raise ParseError("taxonomy nodes must be objects with a 'label' field")
            lab = node["label"]
            if lab in multi:
                raise ParseError(f"duplicate taxonomy label {lab!r}")
            multi[lab] = bool(node.get("multi_instance", False))
            order.append(lab)
            if parent_label is not None:
                parent[lab] = parent_label
            for child in node.get("children", []):
                walk(child, lab)

        walk(obj, None)
        return Taxonomy(order[0], parent, multi, order)

    @staticmethod
    def load(path) -> "Taxonomy":
        with open(path, "r", encoding="utf-8") as f:
            try:
                obj = json.load(f)
            except json.JSONDecodeError as e:
                raise ParseError(f"taxonomy file {path}: {e}") from e
        return Taxonomy.from_json(obj)

    def to_json(self):
        kids = {}
        for lab, par in self._parent.items():
            kids.setdefault(par, []).append(lab)

        def build(lab):
            node = {"label": lab, "multi_instance": self._multi[lab]}
            node["children"] = [build(c) for c in sorted(kids.get(lab, []), key=self._index.get)]
            return node

        return build(self.root_label)

    def contains(self, label: str) -> bool:
        return label in self._multi

    def parent(self, label: str) -> Optional[str]:
        return self._parent.get(label)

    def depth(self, label: str) -> int:
        d = 0
        while label != self.root_label:
            label = self._parent[label]
            d += 1
        return d

    def is_multi_instance(self, label: str) -> bool:
        return self._multi[label]

    def labels(self) -> list:
        return list(self._order)

    def label_index(self, label: str) -> int:
        return self._index[label]

    def __len__(self) -> int:
        return len(self._order)


def spatial_clusters(ids: Sequence[int], centroids: np.ndarray, cut: Optional[float], cap: int) -> list:
    """Greedy single-linkage grouping of node ids by centroid proximity.

    Merges nearest clusters first; a merge is skipped when it would cross the
    distance `cut` (None disables the cut) or push a cluster past `cap`
    members. Clusters and their members come back ordered by lowest id.
    """
    ids = sorted(ids)
    n = len(ids)
    if n == 1:
        return [list(ids)]
    pos = {i: centroids[k] for k, i in enumerate(sorted(ids))} if centroids.shape[0] == n else None
    if pos is None:
        raise ValueError("one centroid per id required")
    parent = {i: i for i in ids}
    size = {i: 1 for i in ids}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    pairs = []
    for ai in range(n):
        for bi in range(ai + 1, n):
            a, b = ids[ai], ids[bi]
            pairs.append((float(np.linalg.norm(pos[a] - pos[b])), a, b))
    pairs.sort()
    for d, a, b in pairs:
        if cut is not None and d >= cut:
            break
        ra, rb = find(a), find(b)
        if ra == rb or size[ra] + size[rb] > cap:
            continue
        lo, hi = min(ra, rb), max(ra, rb)
        parent[hi] = lo
        size[lo] = size[ra] + size[rb]
    clusters = {}
    for i in ids:
        clusters.setdefault(find(i), []).append(i)
    return [sorted(clusters[r]) for r in sorted(clusters)]


def build_hierarchy(segments: Sequence[Segment], taxonomy: Taxonomy, points: np.ndarray) -> Hierarchy:
    """Build the part tree bottom-up from labeled segments.

    Leaves are the input segments in input order. Siblings group under the
    taxonomy parent of their label; multi-instance parent labels split their
    children by centroid clustering (single-linkage, cut at
    SPATIAL_CUT_FRACTION of the shape diagonal), and any sibling group larger
    than MAX_SUBSET_SIZE is split the same way until it fits.
    """
    segments = list(segments)
    if not segments:
        raise EmptyShape("no segments to build a hierarchy from")
    for seg in segments:
        if not taxonomy.contains(seg.semantic):
            raise UnknownLabel(f"label {seg.semantic!r} not in taxonomy")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n_points = points.shape[0]
    for seg in segments:
        idx = seg.sorted_indices()
        if idx[0] < 0 or idx[-1] >= n_points:
            raise InvalidSegmentation("segment references points outside the cloud")
    diag = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0))) if n_points > 1 else 1.0
    if diag <= 0:
        diag = 1.0

    nodes = {}
    children = {}
    centroid = {}
    work = []  # node ids still waiting to be grouped
    for i, seg in enumerate(segments):
        nodes[i] = PartNode(id=i, semantic=seg.semantic, point_indices=seg.point_indices)
        children[i] = ()
        centroid[i] = points[seg.sorted_indices()].mean(axis=0)
        work.append(i)
    next_id = len(segments)

    max_depth = max(taxonomy.depth(lab) for lab in taxonomy.labels())
    for depth in range(max_depth, 0, -1):
        current = [i for i in work if taxonomy.depth(nodes[i].semantic) == depth]
        if not current:
            continue
        work = [i for i in work if taxonomy.depth(nodes[i].semantic) != depth]
        groups = {}
        for i in current:
            groups.setdefault(taxonomy.parent(nodes[i].semantic), []).append(i)
        for parent_label in sorted(groups, key=lambda lab: min(groups[lab])):
            members = sorted(groups[parent_label])
            cut = SPATIAL_CUT_FRACTION * diag if taxonomy.is_multi_instance(parent_label) else None
            cents = np.array([centroid[i] for i in members])
            for cluster in spatial_clusters(members, cents, cut, MAX_SUBSET_SIZE):
                pid = next_id
                next_id += 1
                union = frozenset().union(*(nodes[c].point_indices for c in cluster))
                nodes[pid] = PartNode(id=pid, semantic=parent_label, point_indices=union)
                children[pid] = tuple(cluster)
                idx = np.fromiter(sorted(union), dtype=np.int64)
                centroid[pid] = points[idx].mean(axis=0)
                work.append(pid)

    if len(work) == 1:
        root = work[0]
    else:
        root = next_id
        union = frozenset().union(*(nodes[c].point_indices for c in work))
        nodes[root] = PartNode(id=root, semantic=taxonomy.root_label, point_indices=union)
        children[root] = tuple(sorted(work))
    return Hierarchy(nodes=nodes, children=children, root=root)


def _pair_is_reflective(ca, cb, box_a: OrientedBox, box_b: OrientedBox, centroid, normal, tol) -> bool:
    mirrored = ca - 2.0 * float((ca - centroid) @ normal) * normal
    if np.linalg.norm(mirrored - cb) >= tol:
        return False
    ea = np.sort(box_a.scale.as_array())
    eb = np.sort(box_b.scale.as_array())
    return bool(np.all(np.abs(ea - eb) < tol))


def _same_shape(box_a: OrientedBox, box_b: OrientedBox, tol) -> bool:
    if np.any(np.abs(box_a.scale.as_array() - box_b.scale.as_array()) >= tol):
        return False
    return abs(float(box_a.rotation.as_array() @ box_b.rotation.as_array())) >= 1.0 - tol


def relation_ground_truth(h: Hierarchy, tol: float) -> Hierarchy:
    """Fill h.relations with the geometric relation predicates per subset.

    Adjacent: overlapping boxes or surface gap below tol. Reflective: the box
    maps onto its partner under reflection about the subset-centroid plane
    whose normal is the largest-spread axis of the sibling centers.
    Translational: same extents/rotation with a center offset shared by at
    least two sibling pairs. Rotational: both centers on a common circle
    about the subset centroid (axis = smallest-spread axis), equal radii.
    """
    relations = []
    for parent_id, kids in h.subsets():
        if len(kids) < 2:
            continue
        for c in kids:
            if h.nodes[c].box is None:
                raise MissingGeometry(f"sibling {c} has no bounding box")
        kids = sorted(kids)
        boxes = {c: h.nodes[c].box for c in kids}
        centers = np.array([boxes[c].translation.as_array() for c in kids])
        sub_centroid = centers.mean(axis=0)
        spread = centers - sub_centroid
        cov = spread.T @ spread / len(kids)
        eigvals, eigvecs = np.linalg.eigh(cov)
        axis_max = eigvecs[:, int(np.argmax(eigvals))]
        axis_min = eigvecs[:, int(np.argmin(eigvals))]

        radial = {}
        axial = {}
        for k, c in enumerate(kids):
            rel = centers[k] - sub_centroid
            along = float(rel @ axis_min)
            axial[c] = along
            radial[c] = float(np.linalg.norm(rel - along * axis_min))

        same_shape_offsets = {}
        for ai in range(len(kids)):
            for bi in range(ai + 1, len(kids)):
                a, b = kids[ai], kids[bi]
                if _same_shape(boxes[a], boxes[b], tol):
                    same_shape_offsets[(a, b)] = centers[bi] - centers[ai]

        def offset_shared(pair) -> bool:
            o = same_shape_offsets[pair]
            count = 0
            for other, oo in same_shape_offsets.items():
                if np.linalg.norm(o - oo) < tol or np.linalg.norm(o + oo) < tol:
                    count += 1
            return count >= 2

        for ai in range(len(kids)):
            for bi in range(ai + 1, len(kids)):
                a, b = kids[ai], kids[bi]
                types = set()
                if box_iou(boxes[a], boxes[b]) > 0 or box_gap(boxes[a], boxes[b]) < tol:
                    types.add(RelationType.ADJACENT)
                if _pair_is_reflective(centers[ai], centers[bi], boxes[a], boxes[b], sub_centroid, axis_max, tol):
                    types.add(RelationType.REFLECTIVE)
                if (a, b) in same_shape_offsets and offset_shared((a, b)):
                    types.add(RelationType.TRANSLATIONAL)
                if radial[a] > tol and radial[b] > tol and abs(radial[a] - radial[b]) < tol and abs(axial[a] - axial[b]) < tol:
                    types.add(RelationType.ROTATIONAL)
                if types:
                    relations.append(Relation(a, b, frozenset(types)))
    h.relations = relations
    return h
