"""Seeded random streams and categorical sampling."""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose.

    The stream depends only on (seed, name), so adding draws to one stream
    never shifts another.
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def categorical_sample(probs, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of one index using a single uniform variate."""
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"probabilities sum to {p.sum()}, not 1")
    return _invert(np.cumsum(p), p, rng.random())


def categorical_sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One inverse-CDF draw per row of a [B, K] probability matrix."""
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    return np.array([_invert(cdf[i], probs[i], u[i]) for i in range(probs.shape[0])],
                    dtype=np.int64)


def _invert(cdf: np.ndarray, p: np.ndarray, u: float) -> int:
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    i = min(i, p.size - 1)
    # rounding can land on a trailing zero-probability index
    while p[i] == 0.0 and i > 0:
        i -= 1
    return i
