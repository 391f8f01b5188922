"""Evaluation metrics and report files.

Reports are pure functions of (dataset, checkpoints): no timestamps, no
hostnames, no absolute paths, so byte-identical runs produce byte-identical
report files. JSON output is key-sorted with repr-roundtrip floats; the text
variant renders the same numbers at fixed precision for reading.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Optional

import numpy as np

from . import __version__
from .coarse import CoarseModel, build_index, retrieval_recall, retrieve_topk
from .errors import InvalidValueError
from .fine import FineModel, center_baseline, localization_recall, localize

RETRIEVAL_KS = (1, 3, 5)
LOCALIZATION_KS = (1, 5, 10)
EPSILONS = (5.0, 10.0, 15.0)


def compute_metrics(dataset, coarse_model: CoarseModel,
                    fine_model: Optional[FineModel] = None,
                    queries: Optional[list] = None,
                    top_k: int = 10) -> dict:
    """Retrieval recall, and when a fine model is given, the localization
    grid over coarse candidates plus gt-anchored error statistics."""
    if queries is None:
        queries = dataset.eval_queries
    by_id = {sm.id: sm for sm in dataset.submaps}
    index = build_index(coarse_model, dataset.scene, dataset.submaps)
    metrics: dict = {
        "query_count": len(queries),
        "database_size": len(index),
        "retrieval_recall": {str(k): v for k, v in
                             retrieval_recall(coarse_model, queries, index,
                                              RETRIEVAL_KS).items()},
    }
    if fine_model is None:
        return metrics

    kmax = min(max(LOCALIZATION_KS), len(index), top_k)
    loc_ks = tuple(k for k in LOCALIZATION_KS if k <= kmax)
    results = []
    fine_errors, center_errors = [], []
    for q in queries:
        desc = coarse_model.text.encode(q.hints).data
        ranked = retrieve_topk(desc, index, kmax)
        candidates = [by_id[i] for i in ranked.ids]
        results.append(localize(fine_model, q, dataset.scene, candidates))
        gt = by_id[q.gt_submap_id]
        fine_errors.append(localize(fine_model, q, dataset.scene, [gt]).errors[0])
        center_errors.append(center_baseline(q, [gt]).errors[0])
    grid = localization_recall(results, loc_ks, EPSILONS)
    fine_errors = np.array(fine_errors)
    center_errors = np.array(center_errors)
    metrics["localization_recall"] = {
        str(k): {str(e): grid[k][e] for e in EPSILONS} for k in loc_ks}
    metrics["gt_anchored"] = {
        "fine_mean_error": float(fine_errors.mean()),
        "center_mean_error": float(center_errors.mean()),
        "fine_recall": {str(e): float(np.mean(fine_errors < e)) for e in EPSILONS},
        "center_recall": {str(e): float(np.mean(center_errors < e)) for e in EPSILONS},
    }
    return metrics


def perturbation_deltas(base: dict, perturbed: dict) -> dict:
    """Side-by-side metrics with perturbed-minus-base deltas."""
    out: dict = {"retrieval_recall": {}}
    for k, v in base["retrieval_recall"].items():
        p = perturbed["retrieval_recall"][k]
        out["retrieval_recall"][k] = {"base": v, "perturbed": p, "delta": p - v}
    if "localization_recall" in base and "localization_recall" in perturbed:
        out["localization_recall"] = {
            k: {e: {"base": v, "perturbed": perturbed["localization_recall"][k][e],
                    "delta": perturbed["localization_recall"][k][e] - v}
                for e, v in row.items()}
            for k, row in base["localization_recall"].items()}
    return out


def render_metrics(metrics: dict, title: str) -> str:
    lines = [title,
             f"queries: {metrics['query_count']}   "
             f"database submaps: {metrics['database_size']}",
             "",
             "retrieval recall"]
    for k, v in metrics["retrieval_recall"].items():
        lines.append(f"  top-{k:<3} {v:.4f}")
    if "localization_recall" in metrics:
        grid = metrics["localization_recall"]
        eps_heads = "".join(f"eps<{e:g}m".rjust(10) for e in EPSILONS)
        lines += ["", "localization recall (coarse candidates)",
                  "  " + " " * 7 + eps_heads]
        for k, row in grid.items():
            cells = "".join(f"{row[str(e)]:.4f}".rjust(10) for e in EPSILONS)
            lines.append(f"  top-{k:<3}" + cells)
    if "gt_anchored" in metrics:
        g = metrics["gt_anchored"]
        reduction = 100.0 * (1.0 - g["fine_mean_error"] / g["center_mean_error"]) \
            if g["center_mean_error"] > 0 else 0.0
        lines += ["", "gt-anchored fine stage",
                  f"  mean error: regressed {g['fine_mean_error']:.3f} m, "
                  f"center baseline {g['center_mean_error']:.3f} m "
                  f"({reduction:.1f}% lower)"]
        for e in EPSILONS:
            lines.append(f"  recall eps<{e:g}m: regressed "
                         f"{g['fine_recall'][str(e)]:.4f}, "
                         f"baseline {g['center_recall'][str(e)]:.4f}")
    return "\n".join(lines) + "\n"


def render_perturbation(base: dict, perturbed: dict, replaced_hints: int) -> str:
    deltas = perturbation_deltas(base, perturbed)
    lines = ["query perturbation report",
             f"hints replaced per query: {replaced_hints}",
             "",
             "retrieval recall",
             "  " + " " * 7 + "base".rjust(10) + "perturbed".rjust(10) + "delta".rjust(10)]
    for k, row in deltas["retrieval_recall"].items():
        lines.append(f"  top-{k:<3}"
                     + f"{row['base']:.4f}".rjust(10)
                     + f"{row['perturbed']:.4f}".rjust(10)
                     + f"{row['delta']:+.4f}".rjust(10))
    if "localization_recall" in deltas:
        eps_heads = "".join(f"eps<{e:g}m".rjust(10) for e in EPSILONS)
        lines += ["", "localization recall delta (perturbed - base)",
                  "  " + " " * 7 + eps_heads]
        for k, row in deltas["localization_recall"].items():
            cells = "".join(f"{row[str(e)]['delta']:+.4f}".rjust(10) for e in EPSILONS)
            lines.append(f"  top-{k:<3}" + cells)
    return "\n".join(lines) + "\n"


def descriptor_scatter(coarse_model: CoarseModel, dataset,
                       queries: Optional[list] = None) -> dict:
    """Joint 2D PCA of text and submap descriptors, as plot-ready points."""
    if queries is None:
        queries = dataset.eval_queries
    if len(queries) == 0:
        raise InvalidValueError("scatter needs at least one query")
    text = np.stack([coarse_model.text.encode(q.hints).data for q in queries])
    subs = build_index(coarse_model, dataset.scene, dataset.submaps).matrix
    both = np.vstack([text, subs])
    centered = both - both.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[:2].T
    var = s ** 2
    points = []
    for i, q in enumerate(queries):
        points.append({"kind": "text", "id": int(q.gt_submap_id),
                       "x": float(proj[i, 0]), "y": float(proj[i, 1])})
    for j, sm in enumerate(dataset.submaps):
        row = proj[len(queries) + j]
        points.append({"kind": "submap", "id": int(sm.id),
                       "x": float(row[0]), "y": float(row[1])})
    return {"projection": "pca",
            "explained_fraction": [float(v / var.sum()) for v in var[:2]],
            "points": points}


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def write_text(path: str, content: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(content)


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: str, command: str, seed: int, config: dict,
                   inputs: dict[str, str], outputs: dict[str, str]) -> str:
    """Record what a command consumed and produced. File references are by
    basename and content hash only, so identical runs in different
    directories emit identical manifests."""
    manifest = {
        "command": command,
        "package_version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {name: sha256_file(p) for name, p in sorted(inputs.items())},
        "outputs": {name: sha256_file(p) for name, p in sorted(outputs.items())},
    }
    path = os.path.join(out_dir, f"{command}.manifest.json")
    write_text(path, dump_json(manifest))
    return path
