"""Memory-bank construction by PQ-code perturbation and pseudo-query pairs.

Old documents similar to an incoming document are found by flipping a few
positions of the new document's PQ code and looking the perturbed codes up in
an index of previously issued codes. Pseudo queries are sampled as Gaussian
perturbations of a document's embedding and carry the document's own docid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codebook import Codebook, PqCode
from .rng import RandomSource


class CodeIndex:
    """Lookup from PqCode to the ordered document ids that carry it."""

    def __init__(self):
        self._by_code: dict[PqCode, list] = {}

    @classmethod
    def from_codes(cls, codes: dict) -> "CodeIndex":
        idx = cls()
        for doc_id, code in codes.items():
            idx.add(tuple(code), doc_id)
        return idx

    def add(self, code: PqCode, doc_id) -> None:
        self._by_code.setdefault(code, []).append(doc_id)

    def lookup(self, code: PqCode) -> list:
        return self._by_code.get(tuple(code), [])

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_code.values())


@dataclass(frozen=True)
class MemoryBankEntry:
    old_id: object
    source_id: object
    o: int  # number of code positions that were changed to reach old_id


@dataclass
class MemoryBank:
    session: int
    entries: list[MemoryBankEntry] = field(default_factory=list)

    def doc_ids(self) -> list:
        seen = {}
        for e in self.entries:
            seen.setdefault(e.old_id, None)
        return list(seen)

    def export_lines(self) -> list[str]:
        return [f"{self.session}\t{e.old_id}\t{e.source_id}\t{e.o}" for e in self.entries]


def max_perturb_dims(m: int) -> int:
    """Largest number of code positions the bank search may flip."""
    return max(1, m // 6)


def perturb_codes(code: PqCode, o: int, c: int, cb: Codebook, rng: RandomSource) -> list[PqCode]:
    """Draw up to c codes differing from `code` in exactly o positions.

    Positions whose group has a single centroid cannot change and are excluded;
    if fewer than o positions remain, no perturbation exists and the result is
    empty. Duplicates across the c draws are removed, preserving draw order.
    """
    code = tuple(code)
    m = cb.n_groups
    if not 1 <= o <= m:
        raise ValueError(f"o={o} must be in [1, {m}]")
    if c < 1:
        raise ValueError("c must be >= 1")
    selectable = [i for i in range(m) if cb.groups[i].n_centroids >= 2]
    if len(selectable) < o:
        return []
    out: list[PqCode] = []
    seen = set()
    for _ in range(c):
        dims = [selectable[int(i)] for i in rng.choice_without_replacement(len(selectable), o)]
        new = list(code)
        for d in dims:
            k_d = cb.groups[d].n_centroids
            alt = int(rng.integers(k_d - 1))
            if alt >= code[d]:
                alt += 1
            new[d] = alt
        cand = tuple(new)
        if cand not in seen:
            seen.add(cand)
            out.append(cand)
    return out


def build_memory_bank(
    new_codes: dict,
    index: CodeIndex,
    c: int,
    cb: Codebook,
    rng: RandomSource,
    session: int,
) -> MemoryBank:
    """Collect old documents reachable by perturbing each new document's code.

    The flip count o sweeps 1..max_perturb_dims(M); a document found at
    several o values is kept at the smallest one. Each new document uses a
    stream derived from its id, so the bank is independent of iteration order.
    """
    bank = MemoryBank(session=session)
    for doc_id, code in new_codes.items():
        doc_rng = rng.derive(doc_id)
        found: set = set()
        for o in range(1, max_perturb_dims(cb.n_groups) + 1):
            for cand in perturb_codes(code, o, c, cb, doc_rng.derive(o)):
                for old_id in index.lookup(cand):
                    if old_id not in found:
                        found.add(old_id)
                        bank.entries.append(MemoryBankEntry(old_id, doc_id, o))
    return bank


@dataclass(frozen=True)
class PseudoQueryPair:
    query: np.ndarray
    doc_id: object
    code: PqCode


def generate_pseudo_queries(
    doc_id,
    embedding: np.ndarray,
    code: PqCode,
    n_q: int,
    sigma: float,
    rng: RandomSource,
) -> list[PseudoQueryPair]:
    """Sample n_q noisy copies of a document embedding as pseudo queries."""
    if n_q < 1:
        raise ValueError("n_q must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    embedding = np.asarray(embedding, dtype=float)
    return [
        PseudoQueryPair(embedding + sigma * rng.normal(embedding.shape), doc_id, tuple(code))
        for _ in range(n_q)
    ]
