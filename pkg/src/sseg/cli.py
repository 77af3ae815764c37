"""Command-line pipeline: gen, infer, refine, eval, retrieve, train.

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure. Every
failure prints one machine-parsable line on stderr. Set SSEG_LOG to control
log verbosity.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import NumericError, ParseError, SsegError
from .geom import chamfer_sq
from .metrics import MetricReport, edge_error, part_ap, segmentation_map_pooled, structure_difference
from .refine import MergeDecision, apply_merges, decisions_to_jsonl, detect_conflicts
from .structure import Segment, Taxonomy
from . import report as report_mod
from . import synthio
from .synthio import (
    CATEGORIES,
    TOY_TAXONOMY,
    LabeledCloud,
    NoiseConfig,
    ShapeRecord,
    load_dataset,
    load_hierarchy,
    load_shape,
    save_hierarchy,
    save_shape,
    write_dataset,
)

log = logging.getLogger("sseg")


def _load_taxonomy(spec: str) -> Taxonomy:
    if spec == "toy":
        return TOY_TAXONOMY
    return Taxonomy.load(spec)


def cmd_gen(args) -> int:
    if args.category not in CATEGORIES:
        raise ParseError(f"unknown category {args.category!r}; expected one of {CATEGORIES}")
    seed = int(args.seed)
    noise = NoiseConfig(jitter=args.jitter, oversample_prob=args.oversample_prob)
    records = synthio.gen_dataset(args.category, args.count, seed, noise)
    write_dataset(records, args.out, seed=seed)
    log.info("wrote %d records to %s", len(records), args.out)
    print(f"generated {len(records)} {args.category} shapes -> {args.out}")
    return 0


def _records_in_dir(dir_path) -> list:
    manifest = os.path.join(dir_path, "manifest.json")
    if os.path.exists(manifest):
        with open(manifest, "r", encoding="utf-8") as f:
            entries = json.load(f).get("records", [])
        return [(e["path"], os.path.join(dir_path, e["path"])) for e in entries]
    names = sorted(
        os.path.basename(p)
        for p in glob.glob(os.path.join(glob.escape(str(dir_path)), "*.json"))
        if os.path.basename(p) not in ("manifest.json", "taxonomy.json")
    )
    return [(n, os.path.join(dir_path, n)) for n in names]


def cmd_infer(args) -> int:
    taxonomy = _load_taxonomy(args.taxonomy)
    record = load_shape(args.shape)
    segments = record.cloud.segments()
    if args.rule_based:
        from .nnet.pipeline import rule_based_structure

        h = rule_based_structure(record.cloud.points, segments, taxonomy)
    else:
        from .nnet.params import load_params
        from .nnet.pipeline import ShapeContext, forward_structure

        params = load_params(args.model)
        ctx = ShapeContext.build(record.cloud.points, segments, taxonomy)
        h = forward_structure(ctx, params, args.edge_thresh).apply_to_hierarchy(args.edge_thresh)
    save_hierarchy(h, args.out)
    log.info("inferred hierarchy with %d leaves -> %s", len(h.leaves()), args.out)
    return 0


def _segments_to_cloud(points, segments, normalized: bool) -> LabeledCloud:
    n = points.shape[0]
    semantics = [""] * n
    instances = np.zeros(n, dtype=np.int64)
    for k, seg in enumerate(segments):
        for i in seg.point_indices:
            instances[i] = k
            semantics[i] = seg.semantic
    return LabeledCloud(points, semantics, instances, normalized=normalized)


def cmd_refine(args) -> int:
    from .nnet.params import load_params
    from .nnet.pipeline import ShapeContext, forward_structure, score_candidates

    taxonomy = _load_taxonomy(args.taxonomy)
    params = load_params(args.model)
    record = load_shape(args.shape)
    segments = record.cloud.segments()
    h = load_hierarchy(args.hierarchy)
    if len(h.leaves()) != len(segments):
        raise ParseError(
            f"hierarchy has {len(h.leaves())} leaves but the shape has {len(segments)} instances"
        )

    candidates = detect_conflicts(h, args.iou_thresh)
    ctx = ShapeContext.build(record.cloud.points, segments, taxonomy, hierarchy=None)
    fwd = forward_structure(ctx, params, args.edge_thresh)
    scored = score_candidates(fwd, candidates.pairs(), params)
    decisions = [
        MergeDecision.from_score(s, t, float(score.data), args.merge_thresh)
        for s, t, score in scored
    ]

    ref_h = h
    new_segments = segments
    if any(d.applied for d in decisions):
        new_segments, _ = apply_merges(
            record.cloud.points, segments, h, decisions, taxonomy, args.merge_thresh
        )
        post_ctx = ShapeContext.build(record.cloud.points, new_segments, taxonomy)
        ref_h = forward_structure(post_ctx, params, args.edge_thresh).apply_to_hierarchy(args.edge_thresh)

    os.makedirs(args.out, exist_ok=True)
    cloud = _segments_to_cloud(record.cloud.points, new_segments, record.cloud.normalized)
    save_shape(
        ShapeRecord(cloud=cloud, gt_hierarchy=ref_h, gt_merges=None, category=record.category),
        os.path.join(args.out, "refined_shape.json"),
    )
    save_hierarchy(ref_h, os.path.join(args.out, "refined_hierarchy.json"))
    with open(os.path.join(args.out, "decisions.jsonl"), "w", encoding="utf-8") as f:
        f.write(decisions_to_jsonl(decisions))
    applied = sum(1 for d in decisions if d.applied)
    print(f"{len(decisions)} candidates, {applied} merges applied -> {args.out}")
    return 0


def _eval_one(pred_path, gt_path):
    record = load_shape(gt_path)
    pred_h = load_hierarchy(pred_path)
    gt_h = record.gt_hierarchy
    entry = {"category": record.category}
    entry["ap_25"] = part_ap(pred_h, gt_h)
    entry["edge_error"] = edge_error(pred_h, gt_h)
    pred_segments = [Segment(pred_h.nodes[l].point_indices, pred_h.nodes[l].semantic) for l in pred_h.leaves()]
    gt_segments = [Segment(gt_h.nodes[l].point_indices, gt_h.nodes[l].semantic) for l in gt_h.leaves()]
    return entry, (pred_segments, gt_segments)


def cmd_eval(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - {"ap", "ee", "map"}
    if unknown:
        raise ParseError(f"unknown metrics {sorted(unknown)}; expected ap, ee, map")
    gt_entries = _records_in_dir(args.gt)
    if not gt_entries:
        raise ParseError(f"no shape records under {args.gt}")
    pairs = []
    for name, gt_path in gt_entries:
        pred_path = os.path.join(args.pred, name)
        if not os.path.exists(pred_path):
            raise ParseError(f"missing prediction file {pred_path}")
        pairs.append((name, pred_path, gt_path))

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(lambda p: _eval_one(p[1], p[2]), pairs))
    else:
        results = [_eval_one(p, g) for _, p, g in pairs]

    per_shape = []
    seg_entries = []
    for (name, _, _), (entry, seg_pair) in zip(pairs, results):
        entry["shape"] = name
        per_shape.append(entry)
        seg_entries.append(seg_pair)

    if "ap" not in metrics:
        for e in per_shape:
            e.pop("ap_25", None)
    if "ee" not in metrics:
        for e in per_shape:
            e.pop("edge_error", None)
    summary = MetricReport.from_shapes(per_shape)
    if "map" in metrics:
        per_class, mean = segmentation_map_pooled(seg_entries)
        summary.segmentation = {"per_class": per_class, "map": mean}
    report = summary.to_json()
    report["n_shapes"] = len(per_shape)
    if "ap" not in metrics:
        report.pop("ap_25", None)
    if "ee" not in metrics:
        report.pop("edge_error", None)

    if args.out:
        table = report_mod.write_eval_report(report, args.out, metrics)
    else:
        per_category = report_mod.group_by_category(
            per_shape, [c for c in ("ap_25", "edge_error") if any(c in e for e in per_shape)]
        )
        table = report_mod.metrics_table(
            per_category, [c for c in ("ap_25", "edge_error") if any(c in e for e in per_shape)]
        )
        if "segmentation" in report:
            table += "\nsegmentation mAP@0.5: " + f"{report['segmentation']['map']:.4f}\n"
    print(json.dumps({k: v for k, v in report.items() if k != "per_shape"}, sort_keys=True))
    print(table, end="")
    return 0


def cmd_retrieve(args) -> int:
    query = load_shape(args.query)
    query_abs = os.path.abspath(args.query)
    entries = _records_in_dir(args.corpus)
    if not entries:
        raise ParseError(f"no corpus records under {args.corpus}")
    results = []
    for name, path in entries:
        if os.path.abspath(path) == query_abs:
            continue
        record = load_shape(path)
        sd = structure_difference(query.gt_hierarchy, record.gt_hierarchy)
        cd = chamfer_sq(query.cloud.points, record.cloud.points)
        results.append({"path": name, "structure_difference": sd, "chamfer_sq": cd})
    if args.mode == "structure":
        results.sort(key=lambda r: (r["structure_difference"], r["chamfer_sq"], r["path"]))
    else:
        results.sort(key=lambda r: (r["chamfer_sq"], r["path"]))
    results = results[: args.topk]
    for rank, r in enumerate(results, start=1):
        r["rank"] = rank
    if args.out:
        report_mod.dump_json({"mode": args.mode, "results": results}, args.out)
    print(report_mod.retrieval_table(results), end="")
    return 0


def cmd_train(args) -> int:
    from .nnet.params import save_params
    from .nnet.train import TrainConfig, evaluate_pipeline, train_toy

    config = TrainConfig.from_file(args.config)
    data_dir = args.data or config.data_dir
    if not data_dir:
        raise ParseError("no dataset: pass --data DIR or set data_dir in the config")
    taxonomy_path = os.path.join(data_dir, "taxonomy.json")
    taxonomy = Taxonomy.load(taxonomy_path) if os.path.exists(taxonomy_path) else TOY_TAXONOMY
    train_records = load_dataset(data_dir, split="train")
    heldout = load_dataset(data_dir, split="test")
    if not train_records:
        raise ParseError(f"no training records in {data_dir}")
    log.info("training on %d records, %d held out", len(train_records), len(heldout))

    params, curves = train_toy(train_records, heldout, taxonomy, config)
    os.makedirs(args.out, exist_ok=True)
    save_params(params, os.path.join(args.out, "model.sseg"))
    final = evaluate_pipeline(heldout, params, taxonomy, config) if heldout else {}
    final_summary = {k: v for k, v in final.items() if k != "per_shape"}
    report_mod.write_train_report(curves, final_summary, config.to_json(), args.out)
    print(json.dumps(final_summary, sort_keys=True))
    print(f"model + curves -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sseg",
        description="Part-structure inference, segmentation refinement, and retrieval for labeled point clouds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--category", required=True, help="|".join(CATEGORIES))
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--oversample-prob", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=NoiseConfig.jitter)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("infer", help="infer a part hierarchy with boxes")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="model checkpoint")
    group.add_argument("--rule-based", action="store_true", help="PCA box baseline")
    p.add_argument("--shape", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--taxonomy", default="toy")
    p.add_argument("--edge-thresh", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("refine", help="structure-driven segmentation refinement")
    p.add_argument("--model", required=True)
    p.add_argument("--shape", required=True)
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--iou-thresh", type=float, default=0.09)
    p.add_argument("--merge-thresh", type=float, default=0.7)
    p.add_argument("--edge-thresh", type=float, default=0.5)
    p.add_argument("--taxonomy", default="toy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--metrics", default="ap,ee,map")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", help="rank a corpus against a query shape")
    p.add_argument("--query", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=("structure", "chamfer"), default="structure")
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("train", help="train the structure and refinement networks")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="dataset directory (overrides config data_dir)")
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SSEG_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as e:
        print(f"sseg: error: numeric: {e}", file=sys.stderr)
        return 4
    except SsegError as e:
        print(f"sseg: error: data: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"sseg: error: data: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
