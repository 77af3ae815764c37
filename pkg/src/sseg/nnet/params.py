"""Model parameter table, deterministic initialization, and the binary
checkpoint format (magic "SSEG", version u32, then named tensors as
name-length/name/rank/dims/f64 payload, all little-endian)."""
from __future__ import annotations

import math
import struct

import numpy as np

from ..errors import ParseError
from .autodiff import Tensor

FEATURE_DIM = 128
EDGE_FEATURE_DIM = 256
CANDIDATE_DIM = 256
NUM_RELATION_TYPES = 4

CHECKPOINT_MAGIC = b"SSEG"
CHECKPOINT_VERSION = 1

# softplus(x) = 1  =>  x = ln(e - 1); makes the scale head start at exactly
# the PCA extents so the untrained decoder reproduces the PCA baseline.
SOFTPLUS_INV_ONE = math.log(math.e - 1.0)


def _spec(num_labels: int):
    f = FEATURE_DIM
    return [
        # f_part: per-point MLP 3 -> 64 -> 128, pooled, then linear 128 -> 128
        ("f_part.w1", (3, 64), "normal"),
        ("f_part.b1", (64,), "zeros"),
        ("f_part.w2", (64, f), "normal"),
        ("f_part.b2", (f,), "zeros"),
        ("f_part.w3", (f, f), "normal"),
        ("f_part.b3", (f,), "zeros"),
        # f_child: linear on the elementwise max of the children
        ("f_child.w", (f, f), "normal"),
        ("f_child.b", (f,), "zeros"),
        # f_ctx: linear on [child; parent]
        ("f_ctx.w", (2 * f, f), "normal"),
        ("f_ctx.b", (f,), "zeros"),
        # g_edge: two-layer MLP on [x_i; x_j] -> 256-dim edge feature
        ("g_edge.w1", (2 * f, EDGE_FEATURE_DIM), "normal"),
        ("g_edge.b1", (EDGE_FEATURE_DIM,), "zeros"),
        ("g_edge.w2", (EDGE_FEATURE_DIM, EDGE_FEATURE_DIM), "normal"),
        ("g_edge.b2", (EDGE_FEATURE_DIM,), "zeros"),
        # g_tau: relation-type logits from the edge feature
        ("g_tau.w", (EDGE_FEATURE_DIM, NUM_RELATION_TYPES), "normal"),
        ("g_tau.b", (NUM_RELATION_TYPES,), "zeros"),
        # g_mp: two message-passing iterations plus the aggregation head
        ("g_mp.msg1.w", (2 * f + EDGE_FEATURE_DIM, f), "normal"),
        ("g_mp.msg1.b", (f,), "zeros"),
        ("g_mp.upd1.w", (2 * f, f), "normal"),
        ("g_mp.upd1.b", (f,), "zeros"),
        ("g_mp.msg2.w", (2 * f + EDGE_FEATURE_DIM, f), "normal"),
        ("g_mp.msg2.b", (f,), "zeros"),
        ("g_mp.upd2.w", (2 * f, f), "normal"),
        ("g_mp.upd2.b", (f,), "zeros"),
        ("g_mp.out.w", (2 * f, f), "normal"),
        ("g_mp.out.b", (f,), "zeros"),
        # g_box heads: center offset, extents multiplier, quaternion
        ("g_box.offset.w", (f, 3), "normal"),
        ("g_box.offset.b", (3,), "zeros"),
        ("g_box.scale.w", (f, 3), "normal"),
        ("g_box.scale.b", (3,), "softplus_one"),
        ("g_box.quat.w", (f, 4), "normal"),
        ("g_box.quat.b", (4,), "quat_identity"),
        # f_c: per-point encoder with the one-hot label appended per point
        ("f_c.w1", (3 + num_labels, f), "normal"),
        ("f_c.b1", (f,), "zeros"),
        ("f_c.w2", (f, CANDIDATE_DIM), "normal"),
        ("f_c.b2", (CANDIDATE_DIM,), "zeros"),
        # refinement fusion chain
        ("f_n.w", (CANDIDATE_DIM + f, CANDIDATE_DIM), "normal"),
        ("f_n.b", (CANDIDATE_DIM,), "zeros"),
        ("f_m.w", (2 * CANDIDATE_DIM, CANDIDATE_DIM), "normal"),
        ("f_m.b", (CANDIDATE_DIM,), "zeros"),
        ("f_s.w", (CANDIDATE_DIM + f, CANDIDATE_DIM), "normal"),
        ("f_s.b", (CANDIDATE_DIM,), "zeros"),
        ("g_m.w", (CANDIDATE_DIM, 1), "normal"),
        ("g_m.b", (1,), "zeros"),
    ]


class ModelParams:
    """Named parameter tensors for every network in the pipeline."""

    def __init__(self, tensors: dict, num_labels: int):
        self.tensors = dict(tensors)
        self.num_labels = int(num_labels)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list:
        return list(self.tensors)

    def all_tensors(self) -> list:
        return [self.tensors[n] for n in self.tensors]

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams(
            {n: Tensor(t.data.copy(), requires_grad=True) for n, t in self.tensors.items()},
            self.num_labels,
        )

    @staticmethod
    def init(num_labels: int, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape, kind in _spec(num_labels):
            if kind == "normal":
                fan_in = shape[0]
                data = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)
            elif kind == "zeros":
                data = np.zeros(shape)
            elif kind == "softplus_one":
                data = np.full(shape, SOFTPLUS_INV_ONE)
            elif kind == "quat_identity":
                data = np.array([1.0, 0.0, 0.0, 0.0])
            else:  # pragma: no cover
                raise ValueError(kind)
            tensors[name] = Tensor(data, requires_grad=True)
        return ModelParams(tensors, num_labels)

    @staticmethod
    def zeros(num_labels: int) -> "ModelParams":
        """All-zero parameters (closed-form initialization fixtures)."""
        tensors = {name: Tensor(np.zeros(shape), requires_grad=True) for name, shape, _ in _spec(num_labels)}
        return ModelParams(tensors, num_labels)


def save_params(params: ModelParams, path):
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        entries = [("_meta/num_labels", np.array([float(params.num_labels)]))]
        entries += [(name, t.data) for name, t in params.tensors.items()]
        for name, data in entries:
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", data.ndim))
            for d in data.shape:
                f.write(struct.pack("<I", d))
            f.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_params(path) -> ModelParams:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: not a model checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    off = 8
    tensors = {}
    num_labels = None
    while off < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(dims).astype(np.float64)
        off += 8 * count
        if name == "_meta/num_labels":
            num_labels = int(data[0])
        else:
            tensors[name] = Tensor(data, requires_grad=True)
    if num_labels is None:
        raise ParseError(f"{path}: checkpoint missing _meta/num_labels")
    return ModelParams(tensors, num_labels)
