import math

import numpy as np
import pytest

from sseg.errors import EmptyPointSet
from sseg.geom import (
    OrientedBox,
    UnitQuaternion,
    Vec3,
    box_gap,
    box_iou,
    chamfer_sq,
    pca_obb,
)


def aa_box(cx, cy, cz, sx, sy, sz, q=None):
    return OrientedBox(Vec3(cx, cy, cz), Vec3(sx, sy, sz), q or UnitQuaternion.identity())


def aabb_iou_oracle(amin, amax, bmin, bmax):
    """Closed-form IoU of two axis-aligned boxes given min/max corners."""
    amin, amax, bmin, bmax = map(np.asarray, (amin, amax, bmin, bmax))
    span = np.minimum(amax, bmax) - np.maximum(amin, bmin)
    inter = float(np.prod(np.maximum(span, 0.0)))
    union = float(np.prod(amax - amin)) + float(np.prod(bmax - bmin)) - inter
    return inter / union


class TestQuaternion:
    def test_normalized_and_canonical(self):
        q = UnitQuaternion(-2.0, 0.0, 0.0, 2.0)
        assert q.w >= 0
        assert abs(q.w**2 + q.x**2 + q.y**2 + q.z**2 - 1.0) < 1e-9

    def test_matrix_round_trip(self):
        rng = np.random.RandomState(7)
        for _ in range(50):
            v = rng.randn(4)
            q = UnitQuaternion(*v)
            q2 = UnitQuaternion.from_matrix(q.rotation_matrix())
            assert np.allclose(q.as_array(), q2.as_array(), atol=1e-9)

    def test_rotation_matrix_orthonormal(self):
        q = UnitQuaternion.from_axis_angle([1, 2, 3], 0.9)
        r = q.rotation_matrix()
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(r) - 1) < 1e-12


class TestPcaObb:
    def test_unit_cube_corners(self):
        corners = [Vec3(float(x), float(y), float(z)) for x in (0, 1) for y in (0, 1) for z in (0, 1)]
        box = pca_obb(corners)
        assert np.allclose(box.translation.as_array(), [0.5, 0.5, 0.5], atol=1e-9)
        assert np.allclose(sorted([box.scale.x, box.scale.y, box.scale.z]), [1, 1, 1], atol=1e-9)

    def test_single_point_floor(self):
        box = pca_obb([Vec3(3.0, -1.0, 2.0)])
        assert np.allclose(box.translation.as_array(), [3, -1, 2])
        assert box.scale.x == box.scale.y == box.scale.z == 1e-6

    def test_empty_raises(self):
        with pytest.raises(EmptyPointSet):
            pca_obb([])

    def test_rotated_grid_recovery(self):
        # Construct-then-recover oracle: a known 2x1x0.5 grid rotated by q*
        # must come back with q*'s frame up to axis permutation/sign.
        xs = np.linspace(-1.0, 1.0, 5)
        ys = np.linspace(-0.5, 0.5, 5)
        zs = np.linspace(-0.25, 0.25, 4)
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        grid = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        assert grid.shape[0] == 100
        q_star = UnitQuaternion.from_axis_angle([1.0, -2.0, 0.5], 0.77)
        r_star = q_star.rotation_matrix()
        pts = grid @ r_star.T + np.array([0.3, -0.2, 0.9])

        box = pca_obb(pts)
        assert np.allclose(sorted([box.scale.x, box.scale.y, box.scale.z]), [0.5, 1.0, 2.0], atol=1e-6)
        # each recovered axis must align with exactly one target axis
        alignment = np.abs(box.rotation.rotation_matrix().T @ r_star)
        assert np.allclose(np.sort(alignment.max(axis=0)), [1, 1, 1], atol=1e-9)
        assert np.allclose(alignment.sum(), 3.0, atol=1e-7)

    def test_all_points_contained(self):
        rng = np.random.RandomState(11)
        for _ in range(30):
            pts = rng.randn(rng.randint(1, 60), 3)
            box = pca_obb(pts)
            inflated = OrientedBox(
                box.translation,
                Vec3(box.scale.x + 2e-6, box.scale.y + 2e-6, box.scale.z + 2e-6),
                box.rotation,
            )
            assert inflated.contains(pts).all()


class TestBoxIou:
    def test_self_identity(self):
        box = aa_box(0, 0, 0, 1, 1, 1)
        assert box_iou(box, box) == 1.0

    def test_aligned_slab_exact(self):
        a = aa_box(0.5, 0.5, 0.5, 1, 1, 1)
        b = aa_box(1.0, 0.5, 0.5, 1, 1, 1)  # overlap slab 0.5 x 1 x 1
        assert abs(box_iou(a, b) - 1.0 / 3.0) < 1e-12

    def test_sampled_slab_close(self):
        # Same geometry but a 180-degree rotation forces the sampled path.
        flip = UnitQuaternion.from_axis_angle([0, 0, 1], math.pi)
        a = aa_box(0.5, 0.5, 0.5, 1, 1, 1, q=flip)
        b = aa_box(1.0, 0.5, 0.5, 1, 1, 1)
        assert abs(box_iou(a, b) - 1.0 / 3.0) < 0.02

    def test_disjoint_zero(self):
        a = aa_box(0, 0, 0, 1, 1, 1)
        b = aa_box(5, 0, 0, 1, 1, 1)
        assert box_iou(a, b) == 0.0

    def test_sampled_self_high(self):
        q = UnitQuaternion.from_axis_angle([1, 1, 0], 0.6)
        a = aa_box(0, 0, 0, 1, 0.7, 0.4, q=q)
        b = aa_box(0, 0, 0, 1, 0.7, 0.4, q=UnitQuaternion.from_axis_angle([1, 1, 0], 0.6 + 1e-13))
        assert box_iou(a, b) >= 0.98

    def test_symmetry_and_rigid_invariance(self):
        rng = np.random.RandomState(3)
        for _ in range(25):
            c = rng.randn(2, 3) * 0.4
            s = rng.uniform(0.3, 1.5, (2, 3))
            qa = UnitQuaternion(*rng.randn(4))
            qb = UnitQuaternion(*rng.randn(4))
            a = OrientedBox(Vec3.from_array(c[0]), Vec3.from_array(s[0]), qa)
            b = OrientedBox(Vec3.from_array(c[1]), Vec3.from_array(s[1]), qb)
            iou = box_iou(a, b)
            assert box_iou(b, a) == iou

            # apply one rigid transform to both
            q_rig = UnitQuaternion(*rng.randn(4))
            r = q_rig.rotation_matrix()
            t = rng.randn(3)

            def moved(box):
                return OrientedBox(
                    Vec3.from_array(r @ box.translation.as_array() + t),
                    box.scale,
                    UnitQuaternion.from_matrix(r @ box.rotation.rotation_matrix()),
                )

            assert abs(box_iou(moved(a), moved(b)) - iou) < 0.02


class TestBoxGap:
    def test_touching_faces(self):
        a = aa_box(0, 0, 0, 1, 1, 1)
        b = aa_box(1.0, 0, 0, 1, 1, 1)
        assert box_gap(a, b) == 0.0

    def test_separated(self):
        a = aa_box(0, 0, 0, 1, 1, 1)
        b = aa_box(1.5, 0, 0, 1, 1, 1)
        assert abs(box_gap(a, b) - 0.5) < 1e-12

    def test_overlapping(self):
        a = aa_box(0, 0, 0, 1, 1, 1)
        b = aa_box(0.2, 0.1, 0, 1, 1, 1)
        assert box_gap(a, b) == 0.0


class TestChamfer:
    def test_identical_zero(self):
        pts = np.random.RandomState(0).randn(20, 3)
        assert chamfer_sq(pts, pts.copy()) == 0.0

    def test_two_points(self):
        d = 0.37
        assert abs(chamfer_sq([Vec3(0, 0, 0)], [Vec3(0, 0, d)]) - 2 * d * d) < 1e-15

    def test_matches_brute_force_exactly(self):
        rng = np.random.RandomState(42)
        a = rng.randn(50, 3)
        b = rng.randn(50, 3)
        # brute-force double-loop oracle over the full distance matrix
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        oracle = float(np.mean(d2.min(axis=1)) + np.mean(d2.min(axis=0)))
        assert chamfer_sq(a, b) == oracle

    def test_zero_iff_mutual_cover(self):
        a = np.array([[0, 0, 0], [1, 0, 0]], dtype=float)
        b = np.array([[1, 0, 0], [0, 0, 0], [1, 0, 0]], dtype=float)
        assert chamfer_sq(a, b) == 0.0
        c = np.array([[0, 0, 0], [2, 0, 0]], dtype=float)
        assert chamfer_sq(a, c) > 0.0

    def test_empty_raises(self):
        with pytest.raises(EmptyPointSet):
            chamfer_sq([], [Vec3(0, 0, 0)])
