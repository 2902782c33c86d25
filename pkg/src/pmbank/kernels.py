"""Pooling and similarity kernels used by eviction and down-writing.

Means are accumulated in float64 and stored back as float32.
"""
from __future__ import annotations

import math

import numpy as np

from .core import Frame, PMBError


class NonDivisibleShape(PMBError):
    pass


class ZeroVector(PMBError):
    pass


def avg_pool2d(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Block-average an (H, W, D) grid down to (out_h, out_w, D)."""
    h, w, d = grid.shape
    if out_h <= 0 or out_w <= 0 or h % out_h or w % out_w:
        raise NonDivisibleShape(f"cannot pool {h}x{w} to {out_h}x{out_w}: output must evenly divide input")
    if (out_h, out_w) == (h, w):
        return np.asarray(grid, dtype=np.float32)
    bh, bw = h // out_h, w // out_w
    blocks = np.asarray(grid, dtype=np.float64).reshape(out_h, bh, out_w, bw, d)
    return blocks.mean(axis=(1, 3)).astype(np.float32)


def global_avg_pool(grid: np.ndarray) -> np.ndarray:
    """Per-channel spatial mean, shape (D,)."""
    h, w, d = grid.shape
    return np.asarray(grid, dtype=np.float64).reshape(h * w, d).mean(axis=0).astype(np.float32)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"depth mismatch: {a.shape} vs {b.shape}")
    norm_a = math.sqrt(float(a @ a))
    norm_b = math.sqrt(float(b @ b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    sim = float(a @ b) / (norm_a * norm_b)
    return min(1.0, max(-1.0, sim))


def pooled_pair_similarity(a: Frame, b: Frame) -> float:
    return cosine_similarity(global_avg_pool(a.grid), global_avg_pool(b.grid))


def most_similar_adjacent_pair(pooled) -> int:
    """Index j of the adjacent pair (j, j+1) with the highest cosine similarity.

    Ties go to the earliest pair; pairs involving a zero vector rank lowest.
    """
    if len(pooled) < 2:
        raise ValueError("need at least two frames to form a pair")
    best_j, best_sim = 0, -math.inf
    for j in range(len(pooled) - 1):
        try:
            sim = cosine_similarity(pooled[j], pooled[j + 1])
        except ZeroVector:
            sim = -math.inf
        if sim > best_sim:
            best_j, best_sim = j, sim
    return best_j
