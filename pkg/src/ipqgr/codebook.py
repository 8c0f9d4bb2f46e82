"""Product-quantization codebook: base construction, quantization, reconstruction.

A codebook holds M sub-codebooks, one per vector group. Each sub-codebook
tracks per-centroid membership (record ids, the member sub-vectors, and a
cache of member distances to the current centroid) because the incremental
update thresholds are functions of those distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import RandomSource
from .vector_core import kmeans

PqCode = tuple[int, ...]


@dataclass
class SubCodebook:
    """Centroids and membership statistics for one vector group."""

    centroids: np.ndarray  # (K_m, sub_dim)
    member_ids: list[list] = field(default_factory=list)
    member_vecs: list[np.ndarray] = field(default_factory=list)
    member_dists: list[np.ndarray] = field(default_factory=list)

    @property
    def n_centroids(self) -> int:
        return self.centroids.shape[0]

    def nearest(self, x: np.ndarray) -> tuple[int, float]:
        """Index of the nearest centroid (ties to lowest index) and its distance."""
        d2 = ((self.centroids - x) ** 2).sum(axis=1)
        k = int(d2.argmin())
        return k, float(np.sqrt(d2[k]))

    def add_member(self, k: int, record_id, vec: np.ndarray) -> None:
        self.member_ids[k].append(record_id)
        self.member_vecs[k] = np.vstack([self.member_vecs[k], vec[None, :]])

    def refresh_dists(self, k: int) -> None:
        diffs = self.member_vecs[k] - self.centroids[k]
        self.member_dists[k] = np.sqrt((diffs**2).sum(axis=1))

    def add_centroid(self, vec: np.ndarray, record_id) -> int:
        """Append a new centroid seeded by `vec` with a singleton membership."""
        self.centroids = np.vstack([self.centroids, vec[None, :]])
        self.member_ids.append([record_id])
        self.member_vecs.append(vec[None, :].copy())
        self.member_dists.append(np.zeros(1))
        return self.n_centroids - 1

    def copy(self) -> "SubCodebook":
        return SubCodebook(
            centroids=self.centroids.copy(),
            member_ids=[list(ids) for ids in self.member_ids],
            member_vecs=[v.copy() for v in self.member_vecs],
            member_dists=[d.copy() for d in self.member_dists],
        )


@dataclass
class Codebook:
    """M sub-codebooks over a D-dimensional space, versioned by session."""

    session: int
    dim: int
    groups: list[SubCodebook]

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def sub_dim(self) -> int:
        return self.dim // self.n_groups

    def quantize(self, x) -> PqCode:
        """Per-group nearest-centroid code for `x` (ties to lowest index)."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected vector of dim {self.dim}, got {x.shape}")
        subs = split_groups(x, self.n_groups)
        return tuple(g.nearest(s)[0] for g, s in zip(self.groups, subs))

    def reconstruct(self, code: PqCode) -> np.ndarray:
        """Concatenation of the centroids selected by `code`."""
        if len(code) != self.n_groups:
            raise ValueError(f"code length {len(code)} != {self.n_groups} groups")
        parts = []
        for g, k in zip(self.groups, code):
            if not 0 <= k < g.n_centroids:
                raise ValueError(f"centroid index {k} out of range [0, {g.n_centroids})")
            parts.append(g.centroids[k])
        return np.concatenate(parts)

    def sizes(self) -> list[int]:
        return [g.n_centroids for g in self.groups]

    def copy(self) -> "Codebook":
        return Codebook(self.session, self.dim, [g.copy() for g in self.groups])


def split_groups(x, m: int) -> list[np.ndarray]:
    """Split a D-dim vector into M contiguous sub-vectors of dim D/M."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a 1-D vector")
    if m < 1 or x.shape[0] % m != 0:
        raise ValueError(f"dimension {x.shape[0]} not divisible by {m} groups")
    return list(x.reshape(m, x.shape[0] // m))


def build_base_codebook(
    embeddings,
    m: int,
    k: int,
    rng: RandomSource,
    record_ids: list | None = None,
    max_iters: int = 50,
) -> Codebook:
    """Session-0 codebook: k-means per group with memberships from assignments."""
    embs = np.asarray(embeddings, dtype=float)
    if embs.ndim != 2:
        raise ValueError("embeddings must be a 2-D array")
    n, dim = embs.shape
    if n < k:
        raise ValueError(f"need at least k={k} documents, got {n}")
    if dim % m != 0:
        raise ValueError(f"dimension {dim} not divisible by {m} groups")
    if record_ids is None:
        record_ids = list(range(n))
    if len(record_ids) != n:
        raise ValueError("record_ids length must match embeddings")

    sub_dim = dim // m
    groups = []
    for g in range(m):
        sub = embs[:, g * sub_dim : (g + 1) * sub_dim]
        centroids, assign = kmeans(sub, k, rng.derive("kmeans", g), max_iters=max_iters)
        sc = SubCodebook(centroids=centroids)
        for c in range(k):
            idx = np.where(assign == c)[0]
            sc.member_ids.append([record_ids[i] for i in idx])
            sc.member_vecs.append(sub[idx].copy())
            sc.member_dists.append(np.zeros(0))
            sc.refresh_dists(c)
        groups.append(sc)
    return Codebook(session=0, dim=dim, groups=groups)
