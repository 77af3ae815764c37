import numpy as np
import pytest

from sseg.errors import EmptyShape, MissingGeometry, UnknownLabel
from sseg.geom import OrientedBox, UnitQuaternion, Vec3
from sseg.structure import (
    Hierarchy,
    PartNode,
    RelationType,
    Segment,
    Taxonomy,
    build_hierarchy,
    relation_ground_truth,
)

CHAIR_TAXONOMY = Taxonomy.from_json(
    {
        "label": "chair",
        "children": [
            {"label": "base", "children": [{"label": "leg"}]},
            {"label": "seat"},
            {"label": "back"},
        ],
    }
)


def blob(center, n=4, spread=0.01, seed=0):
    rng = np.random.RandomState(seed)
    return np.asarray(center) + rng.randn(n, 3) * spread


def make_cloud(centers, labels, n_per=4):
    points = np.concatenate([blob(c, n=n_per, seed=k) for k, c in enumerate(centers)])
    segments = []
    for k, lab in enumerate(labels):
        segments.append(Segment(frozenset(range(k * n_per, (k + 1) * n_per)), lab))
    return points, segments


def aa_box(c, s):
    return OrientedBox(Vec3(*c), Vec3(*s), UnitQuaternion.identity())


class TestBuildHierarchy:
    def test_chair_grouping(self):
        centers = [(-0.4, 0, -0.3), (-0.4, 0, 0.3), (0.4, 0, -0.3), (0.4, 0, 0.3), (0, 0.5, 0)]
        labels = ["leg"] * 4 + ["seat"]
        points, segments = make_cloud(centers, labels)
        h = build_hierarchy(segments, CHAIR_TAXONOMY, points)

        assert h.leaves() == [0, 1, 2, 3, 4]
        assert h.nodes[h.root].semantic == "chair"
        kids = {h.nodes[c].semantic for c in h.children[h.root]}
        assert kids == {"base", "seat"}
        base = next(c for c in h.children[h.root] if h.nodes[c].semantic == "base")
        assert sorted(h.children[base]) == [0, 1, 2, 3]

    def test_single_root_label_leaf(self):
        points = blob((0, 0, 0), n=5)
        h = build_hierarchy([Segment(frozenset(range(5)), "chair")], CHAIR_TAXONOMY, points)
        assert h.root == 0
        assert h.leaves() == [0]
        assert h.nodes[0].semantic == "chair"

    def test_multi_instance_split(self):
        tax = Taxonomy.from_json(
            {
                "label": "chair",
                "children": [
                    {"label": "arm_unit", "multi_instance": True, "children": [{"label": "arm"}]},
                ],
            }
        )
        points, segments = make_cloud([(-0.4, 0, 0), (0.4, 0, 0)], ["arm", "arm"])
        h = build_hierarchy(segments, tax, points)
        units = [i for i in h.internal() if h.nodes[i].semantic == "arm_unit"]
        assert len(units) == 2
        assert sorted(len(h.children[u]) for u in units) == [1, 1]

    def test_oversize_group_splits(self):
        centers = [(-1 + 0.01 * k, 0, 0) for k in range(6)] + [(1 + 0.01 * k, 0, 0) for k in range(6)]
        points, segments = make_cloud(centers, ["leg"] * 12)
        h = build_hierarchy(segments, CHAIR_TAXONOMY, points)
        bases = [i for i in h.internal() if h.nodes[i].semantic == "base"]
        assert len(bases) >= 2
        assert all(len(h.children[b]) <= 10 for b in bases)

    def test_deterministic(self):
        centers = [(-0.4, 0, -0.3), (0.4, 0, 0.3), (0, 0.5, 0), (0, 0.9, -0.3)]
        labels = ["leg", "leg", "seat", "back"]
        points, segments = make_cloud(centers, labels)
        h1 = build_hierarchy(segments, CHAIR_TAXONOMY, points)
        h2 = build_hierarchy(segments, CHAIR_TAXONOMY, points)
        assert h1.children == h2.children
        assert {i: n.semantic for i, n in h1.nodes.items()} == {i: n.semantic for i, n in h2.nodes.items()}

    def test_point_partition_invariants(self):
        centers = [(-0.4, 0, -0.3), (-0.4, 0, 0.3), (0.4, 0, -0.3), (0.4, 0, 0.3), (0, 0.5, 0)]
        points, segments = make_cloud(centers, ["leg"] * 4 + ["seat"])
        h = build_hierarchy(segments, CHAIR_TAXONOMY, points)

        leaf_union = frozenset().union(*(h.nodes[i].point_indices for i in h.leaves()))
        seg_union = frozenset().union(*(s.point_indices for s in segments))
        assert leaf_union == seg_union
        total = sum(len(h.nodes[i].point_indices) for i in h.leaves())
        assert total == len(seg_union)
        for pid, kids in h.subsets():
            assert h.nodes[pid].point_indices == frozenset().union(*(h.nodes[c].point_indices for c in kids))

    def test_unknown_label(self):
        points = blob((0, 0, 0))
        with pytest.raises(UnknownLabel):
            build_hierarchy([Segment(frozenset(range(4)), "wing")], CHAIR_TAXONOMY, points)

    def test_empty_shape(self):
        with pytest.raises(EmptyShape):
            build_hierarchy([], CHAIR_TAXONOMY, np.zeros((1, 3)))


def leg_fixture():
    """root{base{4 legs at rectangle corners}, seat}; the seat touches the base."""
    legs = {
        0: aa_box((-0.4, 0.25, -0.3), (0.1, 0.5, 0.1)),
        1: aa_box((-0.4, 0.25, 0.3), (0.1, 0.5, 0.1)),
        2: aa_box((0.4, 0.25, -0.3), (0.1, 0.5, 0.1)),
        3: aa_box((0.4, 0.25, 0.3), (0.1, 0.5, 0.1)),
    }
    nodes = {}
    children = {}
    idx = 0
    for i in range(4):
        nodes[i] = PartNode(i, "leg", frozenset([idx]), box=legs[i])
        children[i] = ()
        idx += 1
    nodes[4] = PartNode(4, "seat", frozenset([4]), box=aa_box((0, 0.55, 0), (1.0, 0.1, 0.8)))
    children[4] = ()
    nodes[5] = PartNode(5, "base", frozenset(range(4)), box=aa_box((0, 0.25, 0), (0.9, 0.5, 0.7)))
    children[5] = (0, 1, 2, 3)
    nodes[6] = PartNode(6, "chair", frozenset(range(5)), box=aa_box((0, 0.3, 0), (1.0, 0.6, 0.8)))
    children[6] = (4, 5)
    return Hierarchy(nodes=nodes, children=children, root=6)


class TestRelationGroundTruth:
    def test_leg_rectangle(self):
        h = relation_ground_truth(leg_fixture(), tol=0.05)
        rel = {(r.a, r.b): r.types for r in h.relations}

        # mirrored pairs about the widest-spread axis (x)
        assert RelationType.REFLECTIVE in rel[(0, 2)]
        assert RelationType.REFLECTIVE in rel[(1, 3)]
        assert RelationType.REFLECTIVE not in rel.get((0, 1), frozenset())
        # offsets shared by two pairs
        for pair in [(0, 1), (2, 3), (0, 2), (1, 3)]:
            assert RelationType.TRANSLATIONAL in rel[pair]
        for pair in [(0, 3), (1, 2)]:
            assert RelationType.TRANSLATIONAL not in rel.get(pair, frozenset())
        # all legs sit on a common circle about the subset centroid
        for pair in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]:
            assert RelationType.ROTATIONAL in rel[pair]
        # legs do not touch each other, but the seat touches the base
        for pair in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]:
            assert RelationType.ADJACENT not in rel[pair]
        assert RelationType.ADJACENT in rel[(4, 5)]

    def test_single_child_no_relations(self):
        nodes = {
            0: PartNode(0, "seat", frozenset([0]), box=aa_box((0, 0, 0), (1, 1, 1))),
            1: PartNode(1, "chair", frozenset([0]), box=aa_box((0, 0, 0), (1, 1, 1))),
        }
        h = Hierarchy(nodes=nodes, children={0: (), 1: (0,)}, root=1)
        relation_ground_truth(h, tol=0.05)
        assert h.relations == []

    def test_touching_boxes_adjacent(self):
        nodes = {
            0: PartNode(0, "leg", frozenset([0]), box=aa_box((0, 0, 0), (1, 1, 1))),
            1: PartNode(1, "leg", frozenset([1]), box=aa_box((1.0, 0, 0), (1, 1, 1))),
            2: PartNode(2, "base", frozenset([0, 1]), box=aa_box((0.5, 0, 0), (2, 1, 1))),
        }
        h = Hierarchy(nodes=nodes, children={0: (), 1: (), 2: (0, 1)}, root=2)
        relation_ground_truth(h, tol=0.05)
        rel = {(r.a, r.b): r.types for r in h.relations}
        assert RelationType.ADJACENT in rel[(0, 1)]

    def test_missing_box_raises(self):
        h = leg_fixture()
        h.nodes[0].box = None
        with pytest.raises(MissingGeometry):
            relation_ground_truth(h, tol=0.05)

    def test_relations_connect_siblings_only(self):
        h = relation_ground_truth(leg_fixture(), tol=0.05)
        for r in h.relations:
            assert h.parent_of[r.a] == h.parent_of[r.b]
