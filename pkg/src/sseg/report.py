"""Report rendering: deterministic JSON, aligned text tables, and matplotlib
figures written next to the delimited output."""
from __future__ import annotations

import json
import math
import os


def _fig_backend():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


def metrics_table(per_category: dict, columns) -> str:
    """Aligned text table: one row per category plus the average row."""
    headers = ["category", "shapes"] + list(columns)
    rows = []
    for cat in sorted(per_category):
        entry = per_category[cat]
        row = [cat, str(entry["shapes"])]
        for col in columns:
            value = entry.get(col)
            row.append("-" if value is None else f"{value:.4f}")
        rows.append(row)
    if per_category:
        total = sum(per_category[c]["shapes"] for c in per_category)
        avg_row = ["avg", str(total)]
        for col in columns:
            values = [(per_category[c][col], per_category[c]["shapes"]) for c in sorted(per_category) if per_category[c].get(col) is not None]
            if values:
                avg = math.fsum(v * n for v, n in values) / sum(n for _, n in values)
                avg_row.append(f"{avg:.4f}")
            else:
                avg_row.append("-")
        rows.append(avg_row)
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def group_by_category(per_shape, keys) -> dict:
    grouped = {}
    for entry in per_shape:
        cat = entry.get("category") or "all"
        grouped.setdefault(cat, []).append(entry)
    out = {}
    for cat, entries in grouped.items():
        stats = {"shapes": len(entries)}
        for key in keys:
            values = [e[key] for e in entries if e.get(key) is not None]
            stats[key] = math.fsum(values) / len(values) if values else None
        out[cat] = stats
    return out


def write_eval_report(report: dict, out_dir, metrics) -> str:
    """report.json + report.txt + per-shape metric figures; returns the table."""
    os.makedirs(out_dir, exist_ok=True)
    dump_json(report, os.path.join(out_dir, "report.json"))

    column_of = {"ap": "ap_25", "ee": "edge_error"}
    columns = [column_of[m] for m in ("ap", "ee") if m in metrics]
    per_category = group_by_category(report.get("per_shape", []), columns)
    table = metrics_table(per_category, columns)
    if "map" in metrics and "segmentation" in report:
        seg = report["segmentation"]
        table += "\nsegmentation mAP@0.5: " + f"{seg['map']:.4f}\n"
        for cls in sorted(seg["per_class"]):
            table += f"  {cls}: {seg['per_class'][cls]:.4f}\n"
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as f:
        f.write(table)

    per_shape = report.get("per_shape", [])
    if per_shape and columns:
        plt = _fig_backend()
        fig, axes = plt.subplots(1, len(columns), figsize=(5 * len(columns), 3.4))
        if len(columns) == 1:
            axes = [axes]
        for ax, col in zip(axes, columns):
            values = [e[col] for e in per_shape if e.get(col) is not None]
            ax.hist(values, bins=20, range=(0, 1), color="#4878a8", edgecolor="white")
            ax.set_xlabel(col)
            ax.set_ylabel("shapes")
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "metrics_per_shape.png"), dpi=120)
        plt.close(fig)
    if "map" in metrics and "segmentation" in report and report["segmentation"]["per_class"]:
        plt = _fig_backend()
        seg = report["segmentation"]["per_class"]
        labels = sorted(seg)
        fig, ax = plt.subplots(figsize=(max(4, 0.7 * len(labels)), 3.4))
        ax.bar(range(len(labels)), [seg[k] for k in labels], color="#6aa66a")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        ax.set_ylabel("AP@0.5")
        ax.set_ylim(0, 1.05)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "segmentation_map.png"), dpi=120)
        plt.close(fig)
    return table


def write_train_report(curves, final_metrics: dict, config: dict, out_dir):
    """curves.csv + report.json + loss/metric curve figures."""
    os.makedirs(out_dir, exist_ok=True)
    from .nnet.train import write_curves_csv

    write_curves_csv(curves, os.path.join(out_dir, "curves.csv"))
    dump_json(
        {"config": config, "final": final_metrics, "curves": curves},
        os.path.join(out_dir, "report.json"),
    )
    if curves:
        plt = _fig_backend()
        epochs = [c["epoch"] for c in curves]
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.6))
        ax1.plot(epochs, [c["structure_loss"] for c in curves], label="structure loss")
        ax1.plot(epochs, [c["merge_loss"] for c in curves], label="merge loss")
        ax1.set_xlabel("epoch")
        ax1.set_yscale("log")
        ax1.legend()
        with_metrics = False
        for key, style in (("ap_25", "-"), ("edge_error", "--"), ("merge_accuracy", ":")):
            if any(key in c for c in curves):
                ax2.plot(epochs, [c.get(key, float("nan")) for c in curves], style, label=key)
                with_metrics = True
        ax2.set_xlabel("epoch")
        ax2.set_ylim(-0.02, 1.02)
        if with_metrics:
            ax2.legend()
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "training_curves.png"), dpi=120)
        plt.close(fig)


def retrieval_table(results: list) -> str:
    headers = ["rank", "path", "structure_diff", "chamfer_sq"]
    rows = [
        [str(r["rank"]), r["path"], str(r["structure_difference"]), f"{r['chamfer_sq']:.6g}"]
        for r in results
    ]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"
