"""Separable-by-construction text/motion corpus for exercising the encoder."""
from __future__ import annotations

import numpy as np

from ..core import NUM_CHANNELS, CoeffVector


def tagged_corpus(n_pairs: int = 200, n_tags: int = 8, noise: float = 0.05,
                  seed: int = 42) -> list[tuple[str, CoeffVector]]:
    """Pair ``i`` has text ``tag<i mod n_tags>`` and a motion drawn around that
    tag's cluster center."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-0.8, 0.8, size=(n_tags, NUM_CHANNELS))
    out = []
    for i in range(n_pairs):
        tag = i % n_tags
        m = np.clip(centers[tag] + noise * rng.standard_normal(NUM_CHANNELS), -1.0, 1.0)
        out.append((f"tag{tag}", CoeffVector(tuple(m.tolist()))))
    return out


def split_tagged(corpus, n_tags: int = 8):
    """Hold out the last ``n_tags`` pairs (one per tag) for validation."""
    return corpus[:-n_tags], corpus[-n_tags:]
