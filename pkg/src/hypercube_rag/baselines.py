"""Comparison retrievers: Okapi BM25 over document text and an exhaustive dense scan."""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence

import numpy as np

from .cube import HypercubeIndex, normalize_label
from .errors import DataError


def text_tokens(text: str) -> list[str]:
    """Whitespace tokens passed through label normalization; empties dropped."""
    return [tok for tok in (normalize_label(t) for t in text.split()) if tok]


class BM25:
    """Okapi BM25 with the non-negative idf ``ln(1 + (N - n + 0.5) / (n + 0.5))``.

    Only documents sharing a term with the query are touched; every other
    document scores 0.
    """

    def __init__(self, corpus: Mapping[str, str] | Iterable[tuple[str, str]], k1: float = 1.2, b: float = 0.75):
        if k1 <= 0:
            raise DataError(f"k1 must be positive, got {k1}")
        if not 0 <= b <= 1:
            raise DataError(f"b must lie in [0, 1], got {b}")
        items = corpus.items() if isinstance(corpus, Mapping) else corpus
        self.k1, self.b = k1, b
        self.doc_ids: list[str] = []
        lengths = []
        postings: dict[str, list[tuple[int, int]]] = {}
        for i, (doc_id, text) in enumerate(items):
            toks = text_tokens(text)
            self.doc_ids.append(str(doc_id))
            lengths.append(len(toks))
            for term, tf in Counter(toks).items():
                postings.setdefault(term, []).append((i, tf))
        self.n_docs = len(self.doc_ids)
        self.doc_len = np.asarray(lengths, dtype=np.float64)
        self.avgdl = float(self.doc_len.mean()) if self.n_docs and self.doc_len.sum() > 0 else 1.0
        self._norm = k1 * (1.0 - b + b * self.doc_len / self.avgdl)
        self.postings = {t: (np.fromiter((d for d, _ in p), dtype=np.int64),
                             np.fromiter((f for _, f in p), dtype=np.float64)) for t, p in postings.items()}
        self.idf = {t: math.log(1.0 + (self.n_docs - len(p[0]) + 0.5) / (len(p[0]) + 0.5))
                    for t, p in self.postings.items()}

    def scores(self, query: str) -> np.ndarray:
        q = text_tokens(query)
        if not q:
            raise DataError("query is empty after tokenization")
        scores = np.zeros(self.n_docs, dtype=np.float64)
        for term in q:
            hit = self.postings.get(term)
            if hit is None:
                continue
            docs, tf = hit
            scores[docs] += self.idf[term] * (tf * (self.k1 + 1.0)) / (tf + self._norm[docs])
        return scores

    def rank(self, query: str, k: int | None = None) -> list[tuple[str, float]]:
        """Documents by descending score, ties by doc_id; all documents unless ``k`` is given."""
        scores = self.scores(query)
        order = sorted(range(self.n_docs), key=lambda i: (-scores[i], self.doc_ids[i])) if k is None \
            else _top(scores, self.doc_ids, k)
        return [(self.doc_ids[i], float(scores[i])) for i in order]


def _top(scores: np.ndarray, doc_ids: Sequence[str], k: int) -> list[int]:
    n = len(scores)
    if k >= n:
        idx = range(n)
    else:
        # everything tied with the k-th score has to compete on doc_id
        kth = np.partition(scores, n - k)[n - k]
        idx = np.flatnonzero(scores >= kth)
    return sorted(idx, key=lambda i: (-scores[i], doc_ids[i]))[:k]


def bm25_rank(query: str, corpus: Mapping[str, str] | Iterable[tuple[str, str]],
              k1: float = 1.2, b: float = 0.75) -> list[tuple[str, float]]:
    return BM25(corpus, k1, b).rank(query)


class DenseScan:
    """Exhaustive cosine search over one pooled label embedding per document.

    A document vector is the normalized mean of its distinct label
    embeddings (all dimensions); documents without labels get a zero vector.
    """

    def __init__(self, index: HypercubeIndex, embedder):
        self.embedder = embedder
        self.doc_ids = sorted(index.doc_store)
        vocab = sorted({lab for doc in index.doc_store.values() for m in doc.labels.values() for lab in m})
        width = None
        rows = {}
        if vocab:
            vecs = np.asarray(embedder.embed(vocab), dtype=np.float64)
            rows = dict(zip(vocab, vecs))
            width = vecs.shape[1]
        width = width or getattr(embedder, "dim", None) or 1
        self.matrix = np.zeros((len(self.doc_ids), width), dtype=np.float64)
        for i, doc_id in enumerate(self.doc_ids):
            labels = sorted({lab for m in index.doc_store[doc_id].labels.values() for lab in m})
            if labels:
                v = np.mean([rows[lab] for lab in labels], axis=0)
                self.matrix[i] = v / (np.linalg.norm(v) or 1.0)

    def search(self, texts: Sequence[str], top_k: int) -> list[tuple[str, float]]:
        if not texts:
            raise DataError("dense scan needs at least one query text")
        q = np.asarray(self.embedder.embed(list(texts)), dtype=np.float64).mean(axis=0)
        q /= np.linalg.norm(q) or 1.0
        scores = self.matrix @ q
        return [(self.doc_ids[i], float(scores[i])) for i in _top(scores, self.doc_ids, top_k)]
