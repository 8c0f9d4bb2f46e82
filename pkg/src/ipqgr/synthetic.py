"""Synthetic corpora: Gaussian-mixture documents with perturbation queries.

Lets the full experiment protocol (and the acceptance suite) run with no
external data. Each document gets one labeled training query and one test
query, both sampled as noisy copies of the document embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import QrelEntry
from .rng import RandomSource


@dataclass
class SyntheticData:
    doc_ids: list[int]
    doc_embs: np.ndarray
    test_query_ids: list[int]
    test_query_embs: np.ndarray
    test_qrels: dict  # query id -> relevant doc id (session filled in later)
    train_query_ids: list[int]
    train_query_embs: np.ndarray
    train_qrels: dict
    token_docs: list[np.ndarray] | None = None


def generate(
    n_docs: int,
    dim: int,
    n_clusters: int,
    rng: RandomSource,
    doc_noise: float = 0.3,
    query_noise: float = 0.1,
    cluster_scale: float = 1.0,
    with_tokens: bool = False,
    token_range: tuple[int, int] = (20, 60),
    token_noise: float = 0.5,
) -> SyntheticData:
    """Build a clustered corpus with one train and one test query per doc."""
    if n_docs < 1 or n_clusters < 1:
        raise ValueError("n_docs and n_clusters must be positive")
    centers = cluster_scale * rng.derive("centers").normal((n_clusters, dim))
    assign = rng.derive("assign").integers(n_clusters, size=n_docs)
    doc_embs = centers[assign] + doc_noise * rng.derive("docs").normal((n_docs, dim))
    test_embs = doc_embs + query_noise * rng.derive("test-queries").normal((n_docs, dim))
    train_embs = doc_embs + query_noise * rng.derive("train-queries").normal((n_docs, dim))

    doc_ids = list(range(n_docs))
    test_ids = list(range(n_docs))
    train_ids = list(range(1_000_000, 1_000_000 + n_docs))
    token_docs = None
    if with_tokens:
        tok_rng = rng.derive("tokens")
        lo, hi = token_range
        token_docs = []
        for i in range(n_docs):
            n_tok = lo + int(tok_rng.derive(i, "len").integers(hi - lo + 1))
            noise = token_noise * tok_rng.derive(i, "vals").normal((n_tok, dim))
            token_docs.append(doc_embs[i] + noise)
    return SyntheticData(
        doc_ids=doc_ids,
        doc_embs=doc_embs,
        test_query_ids=test_ids,
        test_query_embs=test_embs,
        test_qrels={q: d for q, d in zip(test_ids, doc_ids)},
        train_query_ids=train_ids,
        train_query_embs=train_embs,
        train_qrels={q: d for q, d in zip(train_ids, doc_ids)},
        token_docs=token_docs,
    )
