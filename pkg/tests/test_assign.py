import itertools

import numpy as np
import pytest

from sseg.assign import LARGE, hungarian, match_leaves, match_same_semantics
from sseg.errors import InvalidCost, MissingGeometry
from sseg.geom import OrientedBox, UnitQuaternion, Vec3
from sseg.structure import Hierarchy, PartNode


def brute_force_cost(cost):
    """Exhaustive permutation minimum for small matrices (the oracle)."""
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    best = np.inf
    if n <= m:
        for perm in itertools.permutations(range(m), n):
            best = min(best, sum(cost[i, perm[i]] for i in range(n)))
    else:
        for perm in itertools.permutations(range(n), m):
            best = min(best, sum(cost[perm[j], j] for j in range(m)))
    return best


def aa_box(c, s=(1, 1, 1)):
    return OrientedBox(Vec3(*c), Vec3(*s), UnitQuaternion.identity())


def flat_hierarchy(boxes, labels=None):
    """Root with the given leaf boxes as direct children."""
    n = len(boxes)
    labels = labels or ["part"] * n
    nodes = {i: PartNode(i, labels[i], frozenset([i]), box=boxes[i]) for i in range(n)}
    children = {i: () for i in range(n)}
    lo = np.min([b.translation.as_array() - b.scale.as_array() / 2 for b in boxes], axis=0)
    hi = np.max([b.translation.as_array() + b.scale.as_array() / 2 for b in boxes], axis=0)
    root_box = OrientedBox(Vec3.from_array((lo + hi) / 2), Vec3.from_array(hi - lo), UnitQuaternion.identity())
    nodes[n] = PartNode(n, "root", frozenset(range(n)), box=root_box)
    children[n] = tuple(range(n))
    return Hierarchy(nodes=nodes, children=children, root=n)


class TestHungarian:
    def test_simple_2x2(self):
        a = hungarian([[1.0, 2.0], [2.0, 1.0]])
        assert a.pairs == ((0, 0), (1, 1))
        assert a.total_cost == 2.0

    def test_empty_rows(self):
        a = hungarian(np.zeros((0, 3)))
        assert a.pairs == ()
        assert a.unmatched_gt == (0, 1, 2)
        assert a.total_cost == 0.0

    def test_matches_brute_force(self):
        rng = np.random.RandomState(5)
        for _ in range(60):
            n = rng.randint(1, 7)
            m = rng.randint(1, 7)
            cost = rng.rand(n, m)
            a = hungarian(cost)
            assert len(a.pairs) == min(n, m)
            assert abs(a.total_cost - brute_force_cost(cost)) < 1e-12

    def test_nan_raises(self):
        with pytest.raises(InvalidCost):
            hungarian([[np.nan, 1.0], [1.0, 1.0]])

    def test_forbidden_pairs_unmatched(self):
        cost = np.full((2, 2), LARGE)
        cost[0, 0] = 0.1
        a = hungarian(cost)
        assert a.pairs == ((0, 0),)
        assert a.unmatched_pred == (1,)
        assert a.unmatched_gt == (1,)

    def test_transpose_symmetry(self):
        rng = np.random.RandomState(9)
        for _ in range(25):
            cost = rng.rand(rng.randint(1, 6), rng.randint(1, 6))
            a = hungarian(cost)
            b = hungarian(cost.T)
            assert sorted((c, r) for r, c in a.pairs) == sorted(b.pairs)

    def test_constant_shift_keeps_pairing(self):
        rng = np.random.RandomState(13)
        for _ in range(25):
            cost = rng.rand(5, 5)
            a = hungarian(cost)
            b = hungarian(cost + 3.7)
            assert a.pairs == b.pairs


class TestMatchLeaves:
    def test_identity(self):
        h = flat_hierarchy([aa_box((0, 0, 0)), aa_box((3, 0, 0)), aa_box((6, 0, 0))])
        a = match_leaves(h, h)
        assert a.pairs == ((0, 0), (1, 1), (2, 2))
        assert a.total_cost == 0.0

    def test_spurious_box_unmatched(self):
        gt = flat_hierarchy([aa_box((0, 0, 0)), aa_box((3, 0, 0))])
        pred = flat_hierarchy([aa_box((0, 0, 0)), aa_box((3, 0, 0)), aa_box((100, 0, 0))])
        a = match_leaves(pred, gt)
        assert 2 in a.unmatched_pred
        assert len(a.pairs) == 2

    def test_recovers_shuffle(self):
        centers = [(0, 0, 0), (3, 0, 0), (6, 0, 0), (9, 0, 0), (12, 0, 0)]
        perm = [3, 0, 4, 1, 2]
        gt = flat_hierarchy([aa_box(c) for c in centers])
        pred = flat_hierarchy([aa_box(centers[p]) for p in perm])
        a = match_leaves(pred, gt)
        assert dict(a.pairs) == {i: perm[i] for i in range(5)}

    def test_missing_geometry(self):
        h = flat_hierarchy([aa_box((0, 0, 0))])
        h.nodes[0].box = None
        with pytest.raises(MissingGeometry):
            match_leaves(h, h)


class TestMatchSameSemantics:
    def test_cross_label_never_pairs(self):
        pred = flat_hierarchy([aa_box((0, 0, 0))], labels=["leg"])
        gt = flat_hierarchy([aa_box((0, 0, 0))], labels=["seat"])
        a = match_same_semantics(pred, gt)
        leaf_pairs = [(p, g) for p, g in a.pairs if p == 0 or g == 0]
        assert leaf_pairs == []

    def test_permuted_legs_pair(self):
        centers = [(0, 0, 0), (3, 0, 0), (6, 0, 0), (9, 0, 0)]
        perm = [2, 3, 0, 1]
        gt = flat_hierarchy([aa_box(c) for c in centers], labels=["leg"] * 4)
        pred = flat_hierarchy([aa_box(centers[p]) for p in perm], labels=["leg"] * 4)
        a = match_same_semantics(pred, gt)
        mapping = dict(a.pairs)
        for i in range(4):
            assert mapping[i] == perm[i]

    def test_mixed_labels(self):
        boxes = [aa_box((0, 0, 0)), aa_box((3, 0, 0)), aa_box((6, 0, 0))]
        labels = ["leg", "leg", "seat"]
        pred = flat_hierarchy(boxes, labels=labels)
        gt = flat_hierarchy(boxes, labels=labels)
        a = match_same_semantics(pred, gt)
        mapping = dict(a.pairs)
        for i in range(3):
            assert pred.nodes[i].semantic == gt.nodes[mapping[i]].semantic
        assert len([p for p in a.pairs if p[0] < 3]) == 3
