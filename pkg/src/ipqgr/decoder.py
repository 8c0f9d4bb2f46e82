"""Surrogate generative-retrieval decoder.

Docids are length-M PQ codes; the decoder factorizes the docid likelihood
into M independent linear-softmax heads conditioned on the query or document
embedding. Training is full-batch gradient descent on summed cross-entropy
losses plus an optional Fisher-weighted quadratic anchor to the previous
session's parameters. Retrieval decodes codes with beam search constrained to
a prefix trie of assigned docids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, PqCode

Pair = tuple[np.ndarray, PqCode]  # (conditioning vector, target code)


@dataclass
class DecoderParams:
    """Per-group score matrices W_m (K_m x D) and biases b_m (K_m)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    session: int = 0

    @classmethod
    def zeros(cls, sizes: list[int], dim: int, session: int = 0) -> "DecoderParams":
        return cls(
            weights=[np.zeros((k, dim)) for k in sizes],
            biases=[np.zeros(k) for k in sizes],
            session=session,
        )

    @property
    def n_groups(self) -> int:
        return len(self.weights)

    def sizes(self) -> list[int]:
        return [w.shape[0] for w in self.weights]

    def copy(self) -> "DecoderParams":
        return DecoderParams(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.session
        )

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


@dataclass
class FisherDiag:
    """Diagonal Fisher estimate, shaped like the DecoderParams it was taken at."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


def group_log_probs(params: DecoderParams, e: np.ndarray) -> list[np.ndarray]:
    """Per-group log-softmax score vectors for a conditioning vector."""
    e = np.asarray(e, dtype=float)
    out = []
    for w, b in zip(params.weights, params.biases):
        logits = w @ e + b
        mx = logits.max()
        out.append(logits - (mx + np.log(np.exp(logits - mx).sum())))
    return out


def docid_log_prob(e: np.ndarray, code: PqCode, params: DecoderParams) -> float:
    """log p(code | e) summed over the M factorized positions."""
    if len(code) != params.n_groups:
        raise ValueError(f"code length {len(code)} != {params.n_groups} groups")
    logps = group_log_probs(params, e)
    total = 0.0
    for m, k in enumerate(code):
        if not 0 <= k < params.weights[m].shape[0]:
            raise ValueError(f"centroid index {k} out of range in group {m}")
        total += float(logps[m][k])
    return total


def _stack_pairs(pairs: list[Pair]):
    vecs = np.stack([np.asarray(v, dtype=float) for v, _ in pairs])
    codes = np.array([c for _, c in pairs], dtype=int)
    return vecs, codes


def _group_softmax(params: DecoderParams, vecs: np.ndarray, m: int):
    logits = vecs @ params.weights[m].T + params.biases[m]
    mx = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - mx)
    z = ex.sum(axis=1, keepdims=True)
    log_probs = logits - mx - np.log(z)
    return log_probs, ex / z


def mle_loss(pairs: list[Pair], params: DecoderParams):
    """Negative log-likelihood of the target codes; analytic gradients."""
    if not pairs:
        raise ValueError("pair list must be non-empty")
    vecs, codes = _stack_pairs(pairs)
    n = vecs.shape[0]
    loss = 0.0
    d_w, d_b = [], []
    for m in range(params.n_groups):
        log_probs, probs = _group_softmax(params, vecs, m)
        targets = codes[:, m]
        loss -= float(log_probs[np.arange(n), targets].sum())
        g = probs.copy()
        g[np.arange(n), targets] -= 1.0
        d_w.append(g.T @ vecs)
        d_b.append(g.sum(axis=0))
    return loss, (d_w, d_b)


def estimate_fisher(pairs: list[Pair], params: DecoderParams) -> FisherDiag:
    """Empirical diagonal Fisher: mean squared per-pair gradient of -log p."""
    if not pairs:
        raise ValueError("pair list must be non-empty")
    vecs, codes = _stack_pairs(pairs)
    n = vecs.shape[0]
    f_w, f_b = [], []
    for m in range(params.n_groups):
        _, probs = _group_softmax(params, vecs, m)
        g = probs.copy()
        g[np.arange(n), codes[:, m]] -= 1.0
        g2 = g**2
        f_w.append(g2.T @ (vecs**2) / n)
        f_b.append(g2.mean(axis=0))
    return FisherDiag(f_w, f_b)


def ewc_loss(params: DecoderParams, prev: DecoderParams, fisher: FisherDiag):
    """Fisher-weighted squared distance to the previous parameters.

    Rows appended after `prev` was trained have no counterpart and are
    excluded from both the loss and its gradient.
    """
    if params.n_groups != prev.n_groups:
        raise ValueError("group count mismatch")
    loss = 0.0
    d_w = [np.zeros_like(w) for w in params.weights]
    d_b = [np.zeros_like(b) for b in params.biases]
    for m in range(params.n_groups):
        r = prev.weights[m].shape[0]
        if params.weights[m].shape[0] < r or params.weights[m].shape[1] != prev.weights[m].shape[1]:
            raise ValueError(f"group {m} shrank or changed width relative to previous params")
        dw = params.weights[m][:r] - prev.weights[m]
        db = params.biases[m][:r] - prev.biases[m]
        loss += float((fisher.weights[m] * dw**2).sum() + (fisher.biases[m] * db**2).sum())
        d_w[m][:r] = 2.0 * fisher.weights[m] * dw
        d_b[m][:r] = 2.0 * fisher.biases[m] * db
    return loss, (d_w, d_b)


def align_to_codebook(params: DecoderParams, cb: Codebook) -> DecoderParams:
    """Append zero rows for centroids added since the decoder was trained."""
    out = params.copy()
    for m, k in enumerate(cb.sizes()):
        have = out.weights[m].shape[0]
        if k < have:
            raise ValueError(f"group {m}: codebook has fewer centroids ({k}) than decoder rows ({have})")
        if k > have:
            dim = out.weights[m].shape[1]
            out.weights[m] = np.vstack([out.weights[m], np.zeros((k - have, dim))])
            out.biases[m] = np.concatenate([out.biases[m], np.zeros(k - have)])
    return out


def _total_loss(params, pair_groups, prev, fisher, lam):
    loss = 0.0
    d_w = [np.zeros_like(w) for w in params.weights]
    d_b = [np.zeros_like(b) for b in params.biases]
    for pairs in pair_groups:
        if not pairs:
            continue
        l, (gw, gb) = mle_loss(pairs, params)
        loss += l
        for m in range(params.n_groups):
            d_w[m] += gw[m]
            d_b[m] += gb[m]
    if lam != 0.0 and fisher is not None:
        l, (gw, gb) = ewc_loss(params, prev, fisher)
        loss += lam * l
        for m in range(params.n_groups):
            d_w[m] += lam * gw[m]
            d_b[m] += lam * gb[m]
    return loss, (d_w, d_b)


def train_session(
    prev: DecoderParams,
    cb: Codebook,
    doc_pairs: list[Pair],
    bank_pairs: list[Pair],
    pseudo_pairs: list[Pair],
    fisher: FisherDiag | None,
    lam: float,
    step: float,
    steps: int,
) -> DecoderParams:
    """Full-batch descent on MLE(new) + MLE(bank) + MLE(pseudo) + lam * EWC.

    The step size is halved (deterministically, per step) whenever the full
    step would increase the loss, which keeps the loss non-increasing.
    """
    params = align_to_codebook(prev, cb)
    params.session = prev.session + 1
    pair_groups = (doc_pairs, bank_pairs, pseudo_pairs)
    if steps <= 0 or all(not p for p in pair_groups):
        return params
    cur, grads = _total_loss(params, pair_groups, prev, fisher, lam)
    for _ in range(steps):
        gw, gb = grads
        lr = step
        accepted = False
        for _ in range(40):
            trial = DecoderParams(
                [w - lr * g for w, g in zip(params.weights, gw)],
                [b - lr * g for b, g in zip(params.biases, gb)],
                params.session,
            )
            trial_loss, trial_grads = _total_loss(trial, pair_groups, prev, fisher, lam)
            if trial_loss <= cur + 1e-9 * max(1.0, abs(cur)):
                params, cur, grads = trial, trial_loss, trial_grads
                accepted = True
                break
            lr *= 0.5
        if not accepted:
            break
    return params


class DocidTrie:
    """Prefix tree over assigned PQ codes; leaves keep insertion-ordered doc ids."""

    def __init__(self):
        self._root: dict = {}
        self._docs: dict[PqCode, list] = {}

    @classmethod
    def from_codes(cls, codes: dict) -> "DocidTrie":
        trie = cls()
        for doc_id, code in codes.items():
            trie.insert(tuple(code), doc_id)
        return trie

    def insert(self, code: PqCode, doc_id) -> None:
        node = self._root
        for k in code:
            node = node.setdefault(int(k), {})
        self._docs.setdefault(tuple(code), []).append(doc_id)

    def docs_for(self, code: PqCode) -> list:
        return self._docs.get(tuple(code), [])

    @property
    def root(self) -> dict:
        return self._root

    def __len__(self) -> int:
        return len(self._docs)

    def n_docs(self) -> int:
        return sum(len(v) for v in self._docs.values())


def constrained_beam_search(
    q: np.ndarray,
    params: DecoderParams,
    trie: DocidTrie,
    beam: int,
    top_n: int,
) -> list[tuple[object, float]]:
    """Decode docids for a query, restricted to codes present in the trie.

    Returns up to top_n (doc_id, log-prob) entries sorted by score descending,
    ties broken by ascending doc id. Code collisions expand to every carrier
    of the code, in insertion order, all sharing the code's score.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if len(trie) == 0:
        return []
    logps = group_log_probs(params, q)
    beams: list[tuple[float, PqCode, dict]] = [(0.0, (), trie.root)]
    for m in range(params.n_groups):
        cand = []
        for score, prefix, node in beams:
            for k, child in node.items():
                cand.append((score + float(logps[m][k]), prefix + (k,), child))
        cand.sort(key=lambda t: (-t[0], t[1]))
        beams = cand[:beam]
    results = []
    for score, code, _ in beams:
        for doc_id in trie.docs_for(code):
            results.append((doc_id, score))
    results.sort(key=lambda t: (-t[1], t[0]))
    return results[:top_n]
