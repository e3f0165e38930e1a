"""Distribution and retrieval metrics over coefficient vectors or embeddings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import CoeffVector, MotionKeyframeSet
from ..errors import (
    BadK,
    DimensionMismatch,
    EigenFailure,
    EmptySet,
    ShapeMismatch,
    TooFewSamples,
)

COV_REGULARIZER = 1e-6
NORM_TOL = 1e-6


def as_matrix(samples) -> np.ndarray:
    """Stack CoeffVectors / sequences / arrays into an (n, d) float64 matrix."""
    if isinstance(samples, MotionKeyframeSet):
        return samples.array()
    if isinstance(samples, np.ndarray):
        arr = samples.astype(np.float64, copy=False)
        return arr.reshape(1, -1) if arr.ndim == 1 else arr
    rows = [s.values if isinstance(s, CoeffVector) else s for s in samples]
    if not rows:
        return np.zeros((0, 0))
    return np.asarray(rows, dtype=np.float64)


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise TooFewSamples("Gaussian fit needs at least 2 samples")
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise DimensionMismatch("covariance shape does not match mean")
        if not np.allclose(self.cov, self.cov.T, atol=1e-9, rtol=0):
            raise ValueError("covariance must be symmetric")


def fit_gaussian(samples) -> GaussianStats:
    x = as_matrix(samples)
    n = x.shape[0]
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T) + COV_REGULARIZER * np.eye(x.shape[1])
    return GaussianStats(mean, cov, n)


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    try:
        w, v = np.linalg.eigh(0.5 * (m + m.T))
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from None
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), clamped at 0."""
    if a.mean.shape != b.mean.shape:
        raise DimensionMismatch(f"dimension {a.mean.size} vs {b.mean.size}")
    diff = a.mean - b.mean
    root_a = _sqrt_psd(a.cov)
    inner = root_a @ b.cov @ root_a
    try:
        w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from None
    if not np.all(np.isfinite(w)):
        raise EigenFailure("non-finite eigenvalues")
    tr_cross = float(np.sum(np.sqrt(np.clip(w, 0.0, None))))
    d = float(diff @ diff) + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * tr_cross
    return max(d, 0.0)


def fid(gen, gt) -> float:
    return frechet_distance(fit_gaussian(gen), fit_gaussian(gt))


def _quantiles(sorted_x: np.ndarray, grid: np.ndarray) -> np.ndarray:
    if sorted_x.size == 1:
        return np.full(grid.shape, sorted_x[0])
    return np.interp(grid, np.linspace(0.0, 1.0, sorted_x.size), sorted_x)


def wasserstein_dist(a, b) -> float:
    """Per-channel 1-D W1 on a shared quantile grid of max(|a|, |b|) points,
    averaged over channels."""
    xa, xb = as_matrix(a), as_matrix(b)
    if xa.shape[0] == 0 or xb.shape[0] == 0:
        raise EmptySet("both sample sets must be non-empty")
    if xa.shape[1] != xb.shape[1]:
        raise DimensionMismatch(f"dimension {xa.shape[1]} vs {xb.shape[1]}")
    m = max(xa.shape[0], xb.shape[0])
    grid = np.linspace(0.0, 1.0, m) if m > 1 else np.zeros(1)
    sa, sb = np.sort(xa, axis=0), np.sort(xb, axis=0)
    total = 0.0
    for c in range(xa.shape[1]):
        total += float(np.mean(np.abs(_quantiles(sa[:, c], grid) - _quantiles(sb[:, c], grid))))
    return total / xa.shape[1]


def _pair_from_rank(r: int, n: int) -> tuple[int, int]:
    # r-th unordered pair (i < j) in lexicographic order
    i = 0
    while r >= n - 1 - i:
        r -= n - 1 - i
        i += 1
    return i, i + 1 + r


def diversity(samples, pairs: int = 300, seed: int = 42) -> float:
    """Mean Euclidean distance over ``pairs`` distinct random index pairs.

    When ``pairs`` covers every unordered pair, all pairs are used.
    """
    x = as_matrix(samples)
    n = x.shape[0]
    if n < 2:
        raise TooFewSamples("diversity needs at least 2 samples")
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    total = n * (n - 1) // 2
    if pairs >= total:
        idx = np.array([(i, j) for i in range(n) for j in range(i + 1, n)])
    else:
        rng = np.random.default_rng(seed)
        ranks = rng.choice(total, size=pairs, replace=False)
        idx = np.array([_pair_from_rank(int(r), n) for r in ranks])
    d = np.linalg.norm(x[idx[:, 0]] - x[idx[:, 1]], axis=1)
    return float(d.mean())


def diversity_report(gen, gt, pairs: int = 300, seed: int = 42) -> dict:
    return {"gen": diversity(gen, pairs, seed), "gt": diversity(gt, pairs, seed)}


# -- retrieval metrics ---------------------------------------------------------

def _check_batches(texts, motions, normalized=True) -> tuple[np.ndarray, np.ndarray]:
    t, m = np.asarray(texts, dtype=np.float64), np.asarray(motions, dtype=np.float64)
    if t.ndim != 2 or m.ndim != 2 or t.shape != m.shape:
        raise ShapeMismatch(f"embedding batches must share shape, got {t.shape} and {m.shape}")
    if normalized:
        for name, arr in (("texts", t), ("motions", m)):
            norms = np.linalg.norm(arr, axis=1)
            if np.any(np.abs(norms - 1.0) > NORM_TOL):
                raise ValueError(f"{name} rows must be unit-normalized")
    return t, m


def similarity_matrix(texts, motions) -> np.ndarray:
    """S[i, j] = <text_i, motion_j> for unit-normalized rows."""
    t, m = _check_batches(texts, motions)
    return t @ m.T


def match_ranks(sim: np.ndarray) -> np.ndarray:
    """1-based rank of the diagonal entry in each row, descending; ties go to
    the lower column index."""
    s = np.asarray(sim, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeMismatch(f"similarity matrix must be square, got {s.shape}")
    diag = np.diag(s)[:, None]
    cols = np.arange(s.shape[1])[None, :]
    rows = np.arange(s.shape[0])[:, None]
    better = (s > diag) | ((s == diag) & (cols < rows))
    return 1 + better.sum(axis=1)


def r_precision(sim: np.ndarray, k: int) -> float:
    s = np.asarray(sim)
    n = s.shape[0] if s.ndim == 2 else 0
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or not 1 <= k <= max(n, 1) or n == 0:
        raise BadK(f"K must satisfy 1 <= K <= N={n}, got {k!r}")
    return float(np.mean(match_ranks(s) <= k))


def mmd(texts, motions) -> float:
    """Mean Euclidean distance between matched normalized embeddings."""
    t, m = _check_batches(texts, motions)
    return float(np.mean(np.linalg.norm(t - m, axis=1)))


def batched_retrieval(texts, motions, batch_size: int = 32, ks=(1, 2, 3),
                      seed: int | None = 42) -> dict:
    """R-Precision@k and MMD averaged over full batches of a (seeded) shuffle.

    If fewer than ``batch_size`` pairs are given, one batch holds all of them.
    """
    t, m = _check_batches(texts, motions)
    n = t.shape[0]
    if n < 2:
        raise TooFewSamples("retrieval metrics need at least 2 pairs")
    bs = min(batch_size, n)
    order = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)
    scores = {k: [] for k in ks}
    dists = []
    for start in range(0, n - bs + 1, bs):
        sel = order[start:start + bs]
        sim = t[sel] @ m[sel].T
        ranks = match_ranks(sim)
        for k in ks:
            if k > bs:
                raise BadK(f"K={k} exceeds batch size {bs}")
            scores[k].append(float(np.mean(ranks <= k)))
        dists.append(float(np.mean(np.linalg.norm(t[sel] - m[sel], axis=1))))
    return {
        "r_precision": {f"top{k}": float(np.mean(v)) for k, v in scores.items()},
        "mmd": float(np.mean(dists)),
    }
