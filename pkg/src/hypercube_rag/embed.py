"""Embedders: a deterministic offline trigram embedder and an HTTP client.

All embedders return unit-L2 float64 vectors of a fixed width, one row per
input string, and expose a ``name`` used as a cache key.
"""

from __future__ import annotations

import hashlib
import json
import threading
from collections.abc import Sequence

import numpy as np

from .errors import BackendError


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return matrix / norms


class ToyEmbedder:
    """Hashed character-trigram counts folded into ``dim`` buckets.

    Each string is case-folded and padded with boundary markers, so
    ``"rain"`` yields ``<ra rai ain in>``. Buckets come from BLAKE2b, not
    ``hash()``, so vectors are stable across processes.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim
        self.name = f"toy-trigram-{dim}"

    def _bucket(self, gram: str) -> int:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def vector(self, text: str) -> np.ndarray:
        padded = f"<{' '.join(str(text).casefold().split())}>"
        vec = np.zeros(self.dim, dtype=np.float64)
        for i in range(len(padded) - 2):
            vec[self._bucket(padded[i:i + 3])] += 1.0
        norm = np.linalg.norm(vec)
        if norm == 0:
            # "<>" has no trigram; give every such string the same fixed direction
            vec[0] = 1.0
            return vec
        return vec / norm

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if isinstance(texts, str):
            raise TypeError("embed() takes a list of strings")
        if len(texts) == 0:
            raise ValueError("embed() needs at least one text")
        return np.vstack([self.vector(t) for t in texts])


class CachedEmbedder:
    """Memoizes per-string vectors of another embedder (thread-safe)."""

    def __init__(self, inner):
        self.inner = inner
        self.name = inner.name
        self._memo: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def dim(self):
        return getattr(self.inner, "dim", None)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if len(texts) == 0:
            raise ValueError("embed() needs at least one text")
        with self._lock:
            missing = sorted({t for t in texts if t not in self._memo})
        if missing:
            rows = self.inner.embed(missing)
            with self._lock:
                for text, row in zip(missing, rows):
                    self._memo[text] = row
        with self._lock:
            return np.vstack([self._memo[t] for t in texts])


class HttpEmbedder:
    """Client for an OpenAI-style ``POST {endpoint}/embeddings`` API."""

    def __init__(self, endpoint: str, model: str, api_key: str | None = None,
                 timeout: float = 60.0, retry=None, batch_size: int = 64):
        from .llm import RetryPolicy

        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.retry = retry or RetryPolicy()
        self.batch_size = batch_size
        self.name = f"http:{model}"
        self.dim = None

    def _request(self, batch: list[str]) -> list[list[float]]:
        from .llm import post_json

        payload = {"model": self.model, "input": batch}
        data = post_json(f"{self.endpoint}/embeddings", payload, self.api_key, self.timeout)
        try:
            rows = sorted(data["data"], key=lambda r: r["index"])
            return [r["embedding"] for r in rows]
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed embedding reply: {json.dumps(data)[:200]}") from exc

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if len(texts) == 0:
            raise ValueError("embed() needs at least one text")
        rows: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start:start + self.batch_size])
            rows.extend(self.retry.call(lambda: self._request(batch)))
        matrix = _unit_rows(np.asarray(rows, dtype=np.float64))
        if self.dim is None:
            self.dim = matrix.shape[1]
        elif matrix.shape[1] != self.dim:
            raise BackendError(f"embedding width changed from {self.dim} to {matrix.shape[1]}")
        return matrix
