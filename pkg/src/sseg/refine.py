"""Structure-to-segmentation refinement: conflict detection between predicted
part boxes, the per-source merge candidate matrix, and merge execution.

detect_conflicts is pure; apply_merges builds fresh segment and hierarchy
values instead of mutating its inputs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DuplicateSource, UnknownNode
from .geom import box_iou
from .structure import Hierarchy, Segment, Taxonomy, build_hierarchy

CONFLICT_IOU_THRESHOLD = 0.09
MERGE_SCORE_THRESHOLD = 0.7


@dataclass(frozen=True)
class CandidateEntry:
    source: int
    target: int
    conflict_score: float


@dataclass(frozen=True)
class CandidateMatrix:
    """Directional merge candidates: at most one target per source leaf."""

    entries: tuple  # of CandidateEntry, sorted by source id

    def __post_init__(self):
        sources = [e.source for e in self.entries]
        if len(sources) != len(set(sources)):
            raise DuplicateSource("candidate matrix has a repeated source")
        for e in self.entries:
            if e.source == e.target:
                raise ValueError("candidate source equals target")

    def sources(self) -> list:
        return [e.source for e in self.entries]

    def pairs(self) -> list:
        return [(e.source, e.target) for e in self.entries]


@dataclass(frozen=True)
class MergeDecision:
    source: int
    target: int
    score: float
    applied: bool

    @staticmethod
    def from_score(source: int, target: int, score: float, threshold: float = MERGE_SCORE_THRESHOLD) -> "MergeDecision":
        return MergeDecision(source, target, float(score), bool(score > threshold))

    def to_json(self) -> dict:
        return {"source": self.source, "target": self.target, "score": self.score}


def decisions_to_jsonl(decisions) -> str:
    return "\n".join(json.dumps(d.to_json()) for d in decisions) + ("\n" if decisions else "")


def decisions_from_jsonl(text: str, threshold: float = MERGE_SCORE_THRESHOLD) -> list:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        out.append(MergeDecision.from_score(int(obj["source"]), int(obj["target"]), float(obj["score"]), threshold))
    return out


def detect_conflicts(h: Hierarchy, iou_threshold: float = CONFLICT_IOU_THRESHOLD) -> CandidateMatrix:
    """One merge candidate per source leaf: the overlapping leaf with the
    largest conflict score strictly above the threshold (ties to lower id)."""
    h.require_leaf_boxes()
    leaves = h.leaves()
    scores = {}
    for i, a in enumerate(leaves):
        for b in leaves[i + 1 :]:
            s = box_iou(h.nodes[a].box, h.nodes[b].box)
            if s > 0.0:
                scores[(a, b)] = s
    entries = []
    for src in leaves:
        best_target = None
        best_score = iou_threshold
        for tgt in leaves:  # ascending id, so score ties keep the lower target
            if tgt == src:
                continue
            s = scores.get((min(src, tgt), max(src, tgt)), 0.0)
            if s > best_score:
                best_score = s
                best_target = tgt
        if best_target is not None:
            entries.append(CandidateEntry(src, best_target, best_score))
    return CandidateMatrix(tuple(entries))


def _resolve_targets(redirect: dict) -> dict:
    """Follow merge targets to a fixed point; cycles collapse to their lowest id."""
    resolved = {}
    for start in sorted(redirect):
        if start in resolved:
            continue
        path = []
        seen = {}
        node = start
        while True:
            if node in resolved:
                final = resolved[node]
                break
            if node in seen:
                cycle = path[seen[node] :]
                final = min(cycle)
                break
            seen[node] = len(path)
            path.append(node)
            if node in redirect:
                node = redirect[node]
            else:
                final = node
                break
        for n in path:
            resolved[n] = final
    return resolved


def apply_merges(
    points: np.ndarray,
    segments,
    h: Hierarchy,
    decisions,
    taxonomy: Taxonomy,
    merge_threshold: float = MERGE_SCORE_THRESHOLD,
):
    """Execute merge decisions with score strictly above the threshold.

    Each applied source segment's points join its resolved target (chains are
    chased to a fixed point; cycles collapse into their lowest id, whose label
    wins). Returns (surviving segments, rebuilt hierarchy); boxes are the
    caller's job to re-estimate or re-decode.
    """
    leaves = h.leaves()
    segments = list(segments)
    if len(segments) != len(leaves):
        raise ValueError("one segment per current leaf required")
    seg_of = dict(zip(leaves, segments))

    seen_sources = set()
    for d in decisions:
        if d.source in seen_sources:
            raise DuplicateSource(f"source {d.source} appears twice")
        seen_sources.add(d.source)
        if d.source not in seg_of or d.target not in seg_of:
            raise UnknownNode(f"decision {d.source}->{d.target} references a non-leaf id")

    redirect = {d.source: d.target for d in decisions if d.score > merge_threshold}
    resolved = _resolve_targets(redirect)

    absorbed = {}
    for src, final in resolved.items():
        if final != src:
            absorbed.setdefault(final, []).append(src)

    new_segments = []
    for leaf in leaves:
        if leaf in resolved and resolved[leaf] != leaf:
            continue
        indices = set(seg_of[leaf].point_indices)
        for src in absorbed.get(leaf, []):
            indices |= seg_of[src].point_indices
        new_segments.append(Segment(frozenset(indices), seg_of[leaf].semantic))

    new_h = build_hierarchy(new_segments, taxonomy, points)
    return new_segments, new_h
