"""Assemble the metric report for generated vs ground-truth keyframes."""
from __future__ import annotations

from ..core import frame_errors
from ..errors import LengthMismatch
from .metrics import as_matrix, batched_retrieval, diversity_report, fid, wasserstein_dist

ALL_METRICS = ("fid", "wdist", "diversity", "r_precision", "mmd", "mse", "mae", "rmse")


def evaluate_sets(pred, gt, texts=None, model=None, metrics=ALL_METRICS, pairs: int = 300,
                  seed: int = 42, batch_size: int = 32, space: str = "raw") -> dict:
    """Compute the requested metrics.

    ``pred`` and ``gt`` are aligned keyframe sets. Retrieval metrics need a
    trained ``model`` and one text per keyframe; they are skipped otherwise.
    ``space="embedding"`` computes FID / W-Dist / Diversity on motion-encoder
    embeddings instead of raw coefficients.
    """
    p, g = as_matrix(pred), as_matrix(gt)
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")
    out: dict = {}
    if {"mse", "mae", "rmse"} & set(metrics):
        if p.shape != g.shape:
            raise LengthMismatch(f"frame count mismatch: pred has {p.shape[0]}, gt has {g.shape[0]}")
        errs = frame_errors(p, g)
        out.update({k: v for k, v in errs.items() if k in metrics})

    if space == "embedding":
        if model is None:
            raise ValueError("embedding space needs a trained encoder")
        fp, fg = model.encode_motions(p), model.encode_motions(g)
    elif space == "raw":
        fp, fg = p, g
    else:
        raise ValueError(f"unknown feature space {space!r}")
    if "fid" in metrics:
        out["fid"] = fid(fp, fg)
    if "wdist" in metrics:
        out["wdist"] = wasserstein_dist(fp, fg)
    if "diversity" in metrics:
        out["diversity"] = diversity_report(fp, fg, pairs, seed)

    if model is not None and texts is not None and {"r_precision", "mmd"} & set(metrics):
        texts = list(texts)
        if len(texts) != p.shape[0]:
            raise LengthMismatch(f"{len(texts)} texts for {p.shape[0]} generated keyframes")
        te = model.encode_texts(texts)
        me = model.encode_motions(p)
        ks = tuple(k for k in (1, 2, 3) if k <= min(batch_size, len(texts)))
        res = batched_retrieval(te, me, batch_size=batch_size, ks=ks, seed=seed)
        if "r_precision" in metrics:
            out["r_precision"] = res["r_precision"]
        if "mmd" in metrics:
            out["mmd"] = res["mmd"]
    return {k: out[k] for k in ALL_METRICS if k in out}
