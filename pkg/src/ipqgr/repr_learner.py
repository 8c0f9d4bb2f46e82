"""Discriminative representation learning over token-embedding sequences.

Documents are sequences of token vectors. A small tanh projector maps the
mean-pooled tokens into the codebook space; it is trained by alternating
per-group clustering (which fixes codes for an epoch) with gradient descent
on a span-contrastive loss plus a quantization MSE loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, build_base_codebook
from .rng import RandomSource
from .vector_core import beta_sample


@dataclass(frozen=True)
class GranularitySpec:
    """Span-length bounds (in tokens) for one sampling granularity."""

    level: str
    l_min: int
    l_max: int

    def __post_init__(self):
        if not 1 <= self.l_min <= self.l_max:
            raise ValueError("need 1 <= l_min <= l_max")


# Word-level bounds are a desk-scale choice; the other three follow the
# 4/16, 16/64, 64/128 ladder.
DEFAULT_GRANULARITIES = (
    GranularitySpec("word", 1, 4),
    GranularitySpec("phrase", 4, 16),
    GranularitySpec("sentence", 16, 64),
    GranularitySpec("paragraph", 64, 128),
)


@dataclass
class ProjectorParams:
    """Two-layer tanh projector: out = W2 tanh(W1 p + b1) + b2."""

    w1: np.ndarray  # (H, E)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (D, H)
    b2: np.ndarray  # (D,)

    @classmethod
    def init_random(cls, in_dim: int, hidden: int, out_dim: int, rng: RandomSource, scale: float = 0.1):
        return cls(
            w1=scale * rng.normal((hidden, in_dim)),
            b1=np.zeros(hidden),
            w2=scale * rng.normal((out_dim, hidden)),
            b2=np.zeros(out_dim),
        )

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    def forward(self, pooled: np.ndarray) -> np.ndarray:
        """Map pooled inputs (n, E) to representations (n, D)."""
        pooled = np.atleast_2d(np.asarray(pooled, dtype=float))
        if pooled.shape[1] != self.in_dim:
            raise ValueError(f"expected input dim {self.in_dim}, got {pooled.shape[1]}")
        return np.tanh(pooled @ self.w1.T + self.b1) @ self.w2.T + self.b2

    def backward(self, pooled: np.ndarray, d_out: np.ndarray):
        """Parameter gradients given upstream gradients d_out (n, D)."""
        pooled = np.atleast_2d(np.asarray(pooled, dtype=float))
        h = np.tanh(pooled @ self.w1.T + self.b1)
        d_w2 = d_out.T @ h
        d_b2 = d_out.sum(axis=0)
        d_h = (d_out @ self.w2) * (1.0 - h**2)
        d_w1 = d_h.T @ pooled
        d_b1 = d_h.sum(axis=0)
        return ProjectorParams(d_w1, d_b1, d_w2, d_b2)

    def step(self, grads: "ProjectorParams", lr: float) -> "ProjectorParams":
        return ProjectorParams(
            self.w1 - lr * grads.w1,
            self.b1 - lr * grads.b1,
            self.w2 - lr * grads.w2,
            self.b2 - lr * grads.b2,
        )

    def copy(self) -> "ProjectorParams":
        return ProjectorParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


def sample_span(doc: np.ndarray, spec: GranularitySpec, rng: RandomSource,
                alpha: float = 4.0, beta: float = 2.0) -> tuple[int, int]:
    """Sample a 1-based (start, end) window; tokens covered are [start, end).

    Length is round(p * (l_max - l_min)) + l_min with p ~ Beta(alpha, beta),
    clamped so a span is non-empty and never the whole document.
    """
    doc = np.asarray(doc, dtype=float)
    n = doc.shape[0]
    if n < 2:
        raise ValueError("document must have at least 2 tokens to hold a proper span")
    p = beta_sample(alpha, beta, rng)
    length = int(round(p * (spec.l_max - spec.l_min))) + spec.l_min
    length = max(1, min(length, n - 1))
    start = 1 + int(rng.integers(n - length))
    return start, start + length


def pool_span(doc: np.ndarray, span: tuple[int, int]) -> np.ndarray:
    """Mean of the token vectors in a 1-based [start, end) span."""
    doc = np.asarray(doc, dtype=float)
    start, end = span
    if not (1 <= start < end <= doc.shape[0] + 1):
        raise ValueError(f"empty or out-of-bounds span {span} for {doc.shape[0]} tokens")
    return doc[start - 1 : end - 1].mean(axis=0)


def doc_embedding(doc: np.ndarray, proj: ProjectorParams) -> np.ndarray:
    """Project the mean-pooled token sequence into the codebook space."""
    doc = np.asarray(doc, dtype=float)
    if doc.ndim != 2 or doc.shape[1] != proj.in_dim:
        raise ValueError(f"expected (n, {proj.in_dim}) token matrix, got {doc.shape}")
    return proj.forward(doc.mean(axis=0))[0]


def contrastive_loss(reps: np.ndarray, n_docs: int, n_spans: int, tau: float):
    """Span-contrastive loss over a batch of projected representations.

    `reps` has shape (n_docs * (n_spans + 1), dim): rows [0, n_docs) are the
    whole-document anchors, rows [n_docs + i*n_spans, n_docs + (i+1)*n_spans)
    are the spans of document i. Similarity is the dot product. Returns
    (loss, gradient wrt reps).
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    reps = np.asarray(reps, dtype=float)
    total = n_docs * (n_spans + 1)
    if reps.shape[0] != total:
        raise ValueError(f"expected {total} representations, got {reps.shape[0]}")

    logits = reps @ reps.T / tau
    loss = 0.0
    g_logits = np.zeros_like(logits)
    for i in range(n_docs):
        pos = np.arange(n_docs + i * n_spans, n_docs + (i + 1) * n_spans)
        row = logits[i].copy()
        row[i] = -np.inf
        mx = row.max()
        lse = mx + np.log(np.exp(row - mx).sum())
        loss += float(-(row[pos] - lse).sum() / n_spans)
        soft = np.exp(row - lse)
        soft[i] = 0.0
        # d(loss_i)/d(logits[i, j]) summed over the n_spans positive terms.
        g = soft.copy()
        g[pos] -= 1.0 / n_spans
        g_logits[i] = g
    grad = (g_logits @ reps + g_logits.T @ reps) / tau
    return loss, grad


def clustering_loss(reps: np.ndarray, cb: Codebook):
    """Sum of squared quantization errors, with reconstructions held constant."""
    reps = np.asarray(reps, dtype=float)
    if reps.ndim != 2 or reps.shape[1] != cb.dim:
        raise ValueError(f"expected (n, {cb.dim}) representations, got {reps.shape}")
    recon = np.stack([cb.reconstruct(cb.quantize(r)) for r in reps])
    return mse_to_targets(reps, recon)


def mse_to_targets(reps: np.ndarray, targets: np.ndarray):
    diff = reps - targets
    return float((diff**2).sum()), 2.0 * diff


def _sample_epoch_spans(docs, g_per_level, granularities, rng):
    pooled = []
    for i, doc in enumerate(docs):
        doc_rng = rng.derive(i)
        for spec in granularities:
            for j in range(g_per_level):
                span = sample_span(doc, spec, doc_rng.derive(spec.level, j))
                pooled.append(pool_span(doc, span))
    return np.stack(pooled)


def iterative_train(
    docs: list[np.ndarray],
    m: int,
    k: int,
    v: int,
    tau: float,
    g_per_level: int,
    step: float,
    rng: RandomSource,
    out_dim: int,
    hidden: int | None = None,
    inner_iters: int = 20,
    granularities=DEFAULT_GRANULARITIES,
    max_kmeans_iters: int = 50,
):
    """Alternate per-group clustering with projector gradient descent.

    Each epoch rebuilds the codebook from the current document representations,
    freezes the resulting reconstructions, and runs `inner_iters` descent steps
    on contrastive + MSE loss. The step size is halved (deterministically) for
    any iteration where the full step would increase the loss. Returns
    (projector, session-0 codebook, doc-id-index -> PqCode list).
    """
    if len(docs) < k:
        raise ValueError(f"need at least k={k} documents, got {len(docs)}")
    in_dim = np.asarray(docs[0]).shape[1]
    if hidden is None:
        hidden = out_dim
    proj = ProjectorParams.init_random(in_dim, hidden, out_dim, rng.derive("proj-init"))
    pooled_docs = np.stack([np.asarray(d, dtype=float).mean(axis=0) for d in docs])
    n = len(docs)
    n_spans = len(granularities) * g_per_level

    for epoch in range(v):
        reps = proj.forward(pooled_docs)
        cb = build_base_codebook(reps, m, k, rng.derive("kmeans", epoch), max_iters=max_kmeans_iters)
        frozen = np.stack([cb.reconstruct(cb.quantize(r)) for r in reps])
        pooled_spans = _sample_epoch_spans(docs, g_per_level, granularities, rng.derive("spans", epoch))
        pooled_all = np.vstack([pooled_docs, pooled_spans])

        def total_loss(p):
            reps_all = p.forward(pooled_all)
            l_cl, g_cl = contrastive_loss(reps_all, n, n_spans, tau)
            l_mse, g_mse = mse_to_targets(reps_all[:n], frozen)
            g_all = g_cl
            g_all[:n] += g_mse
            return l_cl + l_mse, g_all

        cur, grad_reps = total_loss(proj)
        for _ in range(inner_iters):
            grads = proj.backward(pooled_all, grad_reps)
            lr = step
            for _ in range(40):
                trial = proj.step(grads, lr)
                trial_loss, trial_grad = total_loss(trial)
                if trial_loss <= cur + 1e-9 * max(1.0, abs(cur)):
                    proj, cur, grad_reps = trial, trial_loss, trial_grad
                    break
                lr *= 0.5
            else:
                break  # no improving step at any tried scale

    reps = proj.forward(pooled_docs)
    cb = build_base_codebook(reps, m, k, rng.derive("kmeans", v), max_iters=max_kmeans_iters)
    codes = [cb.quantize(r) for r in reps]
    return proj, cb, codes
