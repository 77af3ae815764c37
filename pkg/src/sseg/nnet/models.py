"""Network operations of the structure inference and refinement pipeline.

Part/candidate encoders are per-point MLPs with max pooling (a desk-scale
stand-in for a full point-set encoder); features are 128-wide throughout,
edge and candidate features 256-wide. Part points are expected in the
shape-normalized frame so positions survive into the features.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyPointSet, NumericError
from ..geom import OrientedBox, UnitQuaternion, Vec3, pca_obb
from . import autodiff as ad
from .autodiff import Tensor
from .params import FEATURE_DIM, ModelParams

# The decoded center may move at most this fraction of the shape diagonal
# away from the part centroid.
OFFSET_FRACTION = 0.1
EDGE_KEEP_THRESHOLD = 0.5
QUAT_NORM_FLOOR = 1e-8


def _linear(x: Tensor, params: ModelParams, name: str) -> Tensor:
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def encode_part(points, params: ModelParams) -> Tensor:
    """128-dim part feature: per-point MLP (3->64->128, ReLU), max-pool, linear."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise EmptyPointSet("cannot encode an empty part")
    h = ad.relu(Tensor(pts) @ params["f_part.w1"] + params["f_part.b1"])
    h = ad.relu(h @ params["f_part.w2"] + params["f_part.b2"])
    pooled = ad.amax(h, axis=0)
    return pooled @ params["f_part.w3"] + params["f_part.b3"]


def aggregate_children(child_feats, params: ModelParams) -> Tensor:
    """Parent feature: elementwise max over the children, then one linear layer."""
    child_feats = list(child_feats)
    if not child_feats:
        raise ValueError("a parent needs at least one child feature")
    if len(child_feats) == 1:
        pooled = child_feats[0]
    else:
        pooled = ad.amax(ad.stack(child_feats, axis=0), axis=0)
    return _linear(pooled, params, "f_child")


def inject_parent_context(child: Tensor, parent: Tensor, params: ModelParams) -> Tensor:
    """Global-context fusion: linear on the 256-dim [child; parent] concat."""
    return _linear(ad.concat([child, parent]), params, "f_ctx")


def classify_relations(x_i: Tensor, x_j: Tensor, params: ModelParams):
    """Edge feature (256) plus the four relation-type probabilities."""
    h = ad.relu(ad.concat([x_i, x_j]) @ params["g_edge.w1"] + params["g_edge.b1"])
    y_ij = h @ params["g_edge.w2"] + params["g_edge.b2"]
    probs = ad.sigmoid(_linear(y_ij, params, "g_tau"))
    return probs, y_ij


def edge_kept(probs: Tensor, threshold: float = EDGE_KEEP_THRESHOLD) -> bool:
    """An edge survives for message passing iff any type probability exceeds 0.5."""
    return bool(np.any(probs.data > threshold))


def message_pass(feats: dict, edges, params: ModelParams) -> dict:
    """Two message-passing iterations over the kept sibling edges.

    `feats` maps node id to its context-aware feature; `edges` is a list of
    (i, j, y_ij) with undirected connectivity. Messages are max-aggregated
    over neighbors; the final feature combines both iterations.
    """
    ids = sorted(feats)
    neighbors = {i: [] for i in ids}
    for i, j, y in edges:
        neighbors[i].append((j, y))
        neighbors[j].append((i, y))
    for i in ids:
        neighbors[i].sort(key=lambda pair: pair[0])

    zero_msg = Tensor(np.zeros(FEATURE_DIM))
    x = dict(feats)
    per_iteration = []
    for it in (1, 2):
        new_x = {}
        for i in ids:
            nbrs = neighbors[i]
            if nbrs:
                msgs = [_linear(ad.concat([x[i], x[j], y]), params, f"g_mp.msg{it}") for j, y in nbrs]
                m_i = msgs[0] if len(msgs) == 1 else ad.amax(ad.stack(msgs, axis=0), axis=0)
            else:
                m_i = zero_msg
            new_x[i] = ad.relu(_linear(ad.concat([x[i], m_i]), params, f"g_mp.upd{it}"))
        x = new_x
        per_iteration.append(x)
    return {i: _linear(ad.concat([per_iteration[0][i], per_iteration[1][i]]), params, "g_mp.out") for i in ids}


def quat_to_matrix(q: Tensor) -> Tensor:
    """Rotation matrix of a normalized quaternion as a differentiable (3,3).

    Fused into one tape node with the analytic Jacobian (the entries are
    quadratic in q), verified against central finite differences in tests.
    """
    q = ad.as_tensor(q)
    w, x, y, z = q.data
    out_data = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    out = Tensor(out_data, parents=(q,))

    def backward_fn(g):
        gw = 2 * (-z * g[0, 1] + y * g[0, 2] + z * g[1, 0] - x * g[1, 2] - y * g[2, 0] + x * g[2, 1])
        gx = 2 * (
            y * g[0, 1] + z * g[0, 2] + y * g[1, 0] - 2 * x * g[1, 1] - w * g[1, 2]
            + z * g[2, 0] + w * g[2, 1] - 2 * x * g[2, 2]
        )
        gy = 2 * (
            -2 * y * g[0, 0] + x * g[0, 1] + w * g[0, 2] + x * g[1, 0] + z * g[1, 2]
            - w * g[2, 0] + z * g[2, 1] - 2 * y * g[2, 2]
        )
        gz = 2 * (
            -2 * z * g[0, 0] - w * g[0, 1] + x * g[0, 2] + w * g[1, 0] - 2 * z * g[1, 1]
            + y * g[1, 2] + x * g[2, 0] + y * g[2, 1]
        )
        q._accumulate(np.array([gw, gx, gy, gz]))

    if q.requires_grad or q.parents:
        out._backward = backward_fn
    else:
        out.parents = ()
    return out


@dataclass
class BoxPrediction:
    """Differentiable decoded box parameters plus their value-level box."""

    center: Tensor  # (3,)
    extents: Tensor  # (3,)
    quat: Tensor  # (4,) normalized (constant identity when the head collapses)

    def as_box(self) -> OrientedBox:
        values = np.concatenate([self.center.data, self.extents.data, self.quat.data])
        if not np.all(np.isfinite(values)):
            raise NumericError("decoded box parameters are not finite")
        extents = np.maximum(self.extents.data, 1e-9)
        return OrientedBox(
            Vec3.from_array(self.center.data),
            Vec3.from_array(extents),
            UnitQuaternion(*self.quat.data),
        )


def node_geometry(points) -> tuple:
    """(centroid, PCA extents) of a part's points, used by the box decoder.

    The extents come back permuted so that entry k belongs to the PCA axis
    best aligned with world axis k (greedy by |dot|); the identity-rotation
    quaternion fallback then pairs with a sensibly oriented box.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise EmptyPointSet("cannot decode a box for an empty part")
    box = pca_obb(pts)
    extents = box.scale.as_array()
    alignment = np.abs(box.rotation.rotation_matrix())  # [world, pca]
    perm = np.full(3, -1, dtype=int)
    taken_world = set()
    taken_pca = set()
    for _ in range(3):
        best = (-1.0, -1, -1)
        for w in range(3):
            if w in taken_world:
                continue
            for p in range(3):
                if p in taken_pca:
                    continue
                if alignment[w, p] > best[0]:
                    best = (alignment[w, p], w, p)
        _, w, p = best
        perm[w] = p
        taken_world.add(w)
        taken_pca.add(p)
    return pts.mean(axis=0), extents[perm]


def decode_box(
    feat: Tensor,
    params: ModelParams,
    centroid: np.ndarray,
    pca_extents: np.ndarray,
    shape_diag: float,
) -> BoxPrediction:
    """Box decoding: centroid plus a bounded offset, softplus-scaled PCA
    extents, and a normalized quaternion head (identity fallback)."""
    offset = ad.tanh(_linear(feat, params, "g_box.offset")) * (OFFSET_FRACTION * shape_diag)
    center = offset + centroid
    extents = ad.softplus(_linear(feat, params, "g_box.scale")) * pca_extents
    qraw = _linear(feat, params, "g_box.quat")
    norm = ad.sqrt(ad.tsum(qraw * qraw))
    if norm.item() < QUAT_NORM_FLOOR:
        quat = Tensor(np.array([1.0, 0.0, 0.0, 0.0]))
    else:
        quat = qraw / norm
    return BoxPrediction(center=center, extents=extents, quat=quat)


def encode_candidate(points, label_onehot, params: ModelParams) -> Tensor:
    """256-dim candidate feature: per-point MLP over [xyz; one-hot], max-pool."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise EmptyPointSet("cannot encode an empty candidate")
    onehot = np.asarray(label_onehot, dtype=np.float64).reshape(-1)
    per_point = np.concatenate([pts, np.repeat(onehot[None, :], pts.shape[0], axis=0)], axis=1)
    h = ad.relu(Tensor(per_point) @ params["f_c.w1"] + params["f_c.b1"])
    h = ad.relu(h @ params["f_c.w2"] + params["f_c.b2"])
    return ad.amax(h, axis=0)


def fuse_node_feature(c_i: Tensor, x_i: Tensor, params: ModelParams) -> Tensor:
    return _linear(ad.concat([c_i, x_i]), params, "f_n")


def build_merge_feature(ci_fused: Tensor, cj_fused: Tensor, params: ModelParams) -> Tensor:
    return _linear(ad.concat([ci_fused, cj_fused]), params, "f_m")


def fuse_structure_code(m_ij: Tensor, x_root: Tensor, params: ModelParams) -> Tensor:
    return _linear(ad.concat([m_ij, x_root]), params, "f_s")


def predict_merge(m_fused: Tensor, params: ModelParams) -> Tensor:
    """Scalar merge probability."""
    return ad.sigmoid(_linear(m_fused, params, "g_m"))[0]


def merge_score(
    points_i,
    onehot_i,
    x_i: Tensor,
    points_j,
    onehot_j,
    x_j: Tensor,
    x_root: Tensor,
    params: ModelParams,
) -> Tensor:
    """Full order-variant merge chain for a source/target candidate pair."""
    ci = fuse_node_feature(encode_candidate(points_i, onehot_i, params), x_i, params)
    cj = fuse_node_feature(encode_candidate(points_j, onehot_j, params), x_j, params)
    m = build_merge_feature(ci, cj, params)
    return predict_merge(fuse_structure_code(m, x_root, params), params)
