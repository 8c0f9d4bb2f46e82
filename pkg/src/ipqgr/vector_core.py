"""Numeric primitives: distances, k-means clustering, beta sampling."""

from __future__ import annotations

import numpy as np

from .rng import RandomSource


def euclidean_dist(a, b) -> float:
    """Euclidean distance between two equal-dimension vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))


def beta_sample(alpha: float, beta: float, rng: RandomSource) -> float:
    """Draw from Beta(alpha, beta) via the two-gamma sum-ratio construction."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("beta shape parameters must be positive")
    g1 = rng.gamma(alpha)
    g2 = rng.gamma(beta)
    return g1 / (g1 + g2)


def _nearest(points: np.ndarray, centroids: np.ndarray):
    # Squared distances, shape (N, K). argmin breaks ties at the lowest index.
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1), d2


def kmeans(points, k: int, rng: RandomSource, max_iters: int = 50):
    """Lloyd's k-means with seeded init from k distinct input points.

    Empty clusters are reseeded with the point farthest from the empty
    cluster's centroid (taken from clusters that keep at least one member).
    Returns (centroids, assignments); the returned assignments are nearest
    with respect to the returned centroids.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a non-empty 2-D array")
    if k < 1:
        raise ValueError("k must be >= 1")
    distinct = np.unique(pts, axis=0)
    if k > distinct.shape[0]:
        raise ValueError(f"k={k} exceeds number of distinct points ({distinct.shape[0]})")

    n = pts.shape[0]
    init_idx = rng.choice_without_replacement(distinct.shape[0], k)
    centroids = distinct[init_idx].copy()

    prev_assign = None
    prev_inertia = np.inf
    for _ in range(max_iters):
        assign, d2 = _nearest(pts, centroids)
        repaired = False
        for c in range(k):
            if (assign == c).any():
                continue
            counts = np.bincount(assign, minlength=k)
            movable = counts[assign] > 1
            if not movable.any():
                continue
            cand = np.where(movable, d2[:, c], -np.inf)
            p = int(cand.argmax())
            centroids[c] = pts[p]
            assign[p] = c
            d2[:, c] = ((pts - centroids[c]) ** 2).sum(axis=1)
            repaired = True
        inertia = float(d2[np.arange(n), assign].sum())
        if not repaired:
            # Lloyd iterations cannot increase inertia; a repair step resets
            # the reference because it deliberately perturbs the objective.
            assert inertia <= prev_inertia + 1e-9 * max(1.0, abs(prev_inertia))
        prev_inertia = inertia
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign
        for c in range(k):
            centroids[c] = pts[assign == c].mean(axis=0)
    final_assign, _ = _nearest(pts, centroids)
    return centroids, final_assign
