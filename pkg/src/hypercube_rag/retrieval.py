"""Query decomposition and label matching against a hypercube index.

A component is first matched exactly against the labels of its own
dimension. Only when no document carries that exact label does the
embedding fallback run: the component is compared with every label on the
dimension and labels with cosine >= tau count as matches.
"""

from __future__ import annotations

import json
import logging
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .cube import DocumentRecord, HypercubeIndex, normalize_dimension_name, normalize_label
from .errors import BackendError, DataError, ReplyParseError, UnknownDimensionError

log = logging.getLogger(__name__)

# Similarities are rounded before thresholding so that a threshold decision
# never depends on floating-point summation order (matmul vs. dot).
SIM_DECIMALS = 9
MAX_NGRAM = 5

_TOKEN_RE = re.compile(r"\w+(?:[.'’\-]\w+)*")


@dataclass(frozen=True)
class QueryComponent:
    dimension: str
    content: str

    def __post_init__(self):
        object.__setattr__(self, "dimension", normalize_dimension_name(self.dimension))
        content = normalize_label(self.content)
        if content is None:
            raise DataError(f"query component on {self.dimension!r} is empty after normalization")
        object.__setattr__(self, "content", content)

    def to_dict(self) -> dict:
        return {"dimension": self.dimension, "content": self.content}


@dataclass(frozen=True)
class MatchResult:
    doc_id: str
    covered: frozenset[int]
    exact_score: int
    semantic_hits: tuple[tuple[int, str, float], ...] = ()
    freq_sum: int = 0

    @property
    def coverage(self) -> int:
        return len(self.covered)

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "covered": sorted(self.covered),
            "exact_score": self.exact_score,
            "semantic_hits": [list(h) for h in self.semantic_hits],
            "freq_sum": self.freq_sum,
        }


@dataclass(frozen=True)
class RetrievalConfig:
    top_k: int = 5
    tau: float = 0.9
    semantic_enabled: bool = True
    exact_enabled: bool = True
    disabled_dimensions: frozenset[str] = frozenset()
    ranking_enabled: bool = True

    def __post_init__(self):
        if self.top_k < 1:
            raise DataError(f"top_k must be positive, got {self.top_k}")
        if not 0.0 <= self.tau <= 1.0:
            raise DataError(f"tau must lie in [0, 1], got {self.tau}")
        if not (self.semantic_enabled or self.exact_enabled):
            raise DataError("at least one of exact and semantic matching must be enabled")
        object.__setattr__(
            self, "disabled_dimensions",
            frozenset(normalize_dimension_name(d) for d in self.disabled_dimensions),
        )

    def to_dict(self) -> dict:
        return {
            "top_k": self.top_k,
            "tau": self.tau,
            "semantic_enabled": self.semantic_enabled,
            "exact_enabled": self.exact_enabled,
            "disabled_dimensions": sorted(self.disabled_dimensions),
            "ranking_enabled": self.ranking_enabled,
        }


@dataclass
class RetrievalStats:
    """Work counters; ``scored_docs`` is the number of per-document score computations."""

    scored_docs: int = 0
    semantic_calls: int = 0
    label_comparisons: int = 0
    postings_touched: int = 0
    exact_components: list[int] = field(default_factory=list)
    semantic_components: list[int] = field(default_factory=list)


# -- decomposition ------------------------------------------------------------

_LINE_RE = re.compile(
    r"query_dimension\s*:\s*[`'\"‘’]?([^;`'\"‘’\n]+?)[`'\"‘’]?\s*;\s*"
    r"query_content\s*:\s*[`'\"‘’]?([^;`'\"‘’\n]+?)[`'\"‘’]?\s*(?:;|$)",
    re.MULTILINE,
)


def parse_decomposition(raw: str) -> list[tuple[str, str]]:
    """Read (dimension, content) pairs from a model reply.

    The expected reply is a JSON array of ``{"dimension", "content"}``
    objects; the numbered ``query_dimension: ...; query_content: ...``
    line format is accepted as well.
    """
    from .llm import parse_json_reply

    try:
        data = parse_json_reply(raw)
    except json.JSONDecodeError:
        pairs = [(d.strip(), c.strip()) for d, c in _LINE_RE.findall(raw)]
        if not pairs and raw.strip() not in ("", "[]"):
            raise ReplyParseError("decomposition reply is neither JSON nor query_dimension lines", raw) from None
        return pairs
    if not isinstance(data, list):
        raise ReplyParseError("decomposition reply must be a JSON array", raw)
    pairs = []
    for item in data:
        if not isinstance(item, dict):
            raise ReplyParseError("decomposition items must be objects", raw)
        dim = item.get("dimension", item.get("query_dimension"))
        content = item.get("content", item.get("query_content"))
        if not isinstance(dim, str) or not isinstance(content, str):
            raise ReplyParseError("decomposition item lacks string dimension/content", raw)
        pairs.append((dim, content))
    return pairs


def _components_from_pairs(pairs: Iterable[tuple[str, str]], valid: Sequence[str]) -> list[QueryComponent]:
    out: list[QueryComponent] = []
    seen = set()
    for dim, content in pairs:
        name = normalize_dimension_name(dim)
        if name not in valid:
            log.warning("dropping component %r on unknown dimension %r", content, dim)
            continue
        if normalize_label(content) is None:
            continue
        comp = QueryComponent(name, content)
        if comp not in seen:
            seen.add(comp)
            out.append(comp)
    return out


def _schema_names(schema) -> list[str]:
    if isinstance(schema, HypercubeIndex):
        schema = schema.dimensions
    return [d.name for d in schema]


def decompose_query(question: str, schema, client) -> list[QueryComponent]:
    """Ask the chat model to split ``question`` into per-dimension components."""
    dims = schema.dimensions if isinstance(schema, HypercubeIndex) else list(schema)
    if not dims:
        raise DataError("cannot decompose against an empty schema")
    listing = "\n".join(f"- {d.name}: {d.description}" if d.description else f"- {d.name}" for d in dims)
    try:
        raw = client.chat("decompose", dimensions=listing, question=question)
    except BackendError as exc:
        raise BackendError(
            f"query decomposition failed ({exc}); use fallback_decompose for an offline decomposition",
            retryable=exc.retryable,
        ) from exc
    components = _components_from_pairs(parse_decomposition(raw), _schema_names(dims))
    if not components:
        raise DataError("no components: the decomposition produced nothing usable")
    return components


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.casefold())


def _vocabulary(index: HypercubeIndex) -> dict[str, list[tuple[str, str]]]:
    key = ("vocab",)
    vocab = index._label_cache.get(key)
    if vocab is None:
        vocab = {}
        for dim in index.dimension_names:
            for label in index.labels(dim):
                toks = tokenize(label)
                if toks and len(toks) <= MAX_NGRAM:
                    vocab.setdefault(" ".join(toks), []).append((dim, label))
        index._label_cache[key] = vocab
    return vocab


def fallback_decompose(question: str, index: HypercubeIndex) -> list[QueryComponent]:
    """Offline decomposition: longest-first n-gram lookup in the index vocabulary.

    Query n-grams (n <= 5) are compared with label token sequences; each
    query token is consumed by at most one match. A phrase that is a label
    on several dimensions yields one component per dimension.
    """
    tokens = tokenize(question)
    vocab = _vocabulary(index)
    used = [False] * len(tokens)
    found: list[tuple[int, int, QueryComponent]] = []
    order = {name: i for i, name in enumerate(index.dimension_names)}
    for n in range(min(MAX_NGRAM, len(tokens)), 0, -1):
        for start in range(len(tokens) - n + 1):
            if any(used[start:start + n]):
                continue
            hits = vocab.get(" ".join(tokens[start:start + n]))
            if not hits:
                continue
            for i in range(start, start + n):
                used[i] = True
            for dim, label in hits:
                found.append((start, order[dim], QueryComponent(dim, label)))
    found.sort(key=lambda t: (t[0], t[1]))
    return [c for _, _, c in found]


# -- scoring ------------------------------------------------------------------

def exact_score(doc: DocumentRecord, components: Sequence[QueryComponent]) -> int:
    """Number of components whose content is a label of ``doc`` on the component's dimension."""
    return sum(1 for c in components if c.content in doc.labels.get(c.dimension, ()))


def exact_freq_sum(doc: DocumentRecord, components: Sequence[QueryComponent]) -> int:
    return sum(doc.labels.get(c.dimension, {}).get(c.content, 0) for c in components)


def label_matrix(index: HypercubeIndex, dimension: str, embedder) -> tuple[list[str], np.ndarray | None]:
    """Sorted labels of one dimension and their embeddings (cached on the index)."""
    key = ("labels", getattr(embedder, "name", id(embedder)), dimension)
    cached = index._label_cache.get(key)
    if cached is None:
        labels = index.labels(dimension)
        matrix = np.asarray(embedder.embed(labels), dtype=np.float64) if labels else None
        cached = (labels, matrix)
        index._label_cache[key] = cached
    return cached


def semantic_match(component: QueryComponent, index: HypercubeIndex, embedder, tau: float,
                   stats: RetrievalStats | None = None) -> list[tuple[str, float]]:
    """Labels on the component's dimension with cosine similarity >= ``tau``.

    Sorted by similarity (descending), then label.
    """
    labels, matrix = label_matrix(index, component.dimension, embedder)
    if not labels:
        return []
    query_vec = np.asarray(embedder.embed([component.content]), dtype=np.float64)[0]
    sims = np.round(matrix @ query_vec, SIM_DECIMALS)
    if stats is not None:
        stats.semantic_calls += 1
        stats.label_comparisons += len(labels)
    keep = np.flatnonzero(sims >= tau)
    hits = [(labels[i], float(sims[i])) for i in keep]
    hits.sort(key=lambda h: (-h[1], h[0]))
    return hits


def resolve_components(query, index: HypercubeIndex, client=None) -> list[QueryComponent]:
    if isinstance(query, str):
        if client is not None:
            return decompose_query(query, index, client)
        return fallback_decompose(query, index)
    return [c if isinstance(c, QueryComponent) else QueryComponent(**c) for c in query]


def retrieve(query, index: HypercubeIndex, config: RetrievalConfig | None = None, embedder=None,
             *, client=None, stats: RetrievalStats | None = None) -> list[MatchResult]:
    """Candidate documents for a query, with per-document match evidence.

    ``query`` is either a question string (decomposed with ``client`` if
    given, else by :func:`fallback_decompose`) or a list of components.
    Only documents on the posting lists of matched labels are scored.
    Results are in doc_id order; use :func:`hypercube_rag.ranking.rank` to order them.
    """
    config = config or RetrievalConfig()
    stats = stats if stats is not None else RetrievalStats()
    components = resolve_components(query, index, client)
    if not components:
        raise DataError("no components to retrieve with")
    for comp in components:
        if comp.dimension not in index.postings:
            raise UnknownDimensionError(comp.dimension, index.dimension_names)
    if config.semantic_enabled and embedder is None:
        raise DataError("semantic matching is enabled but no embedder was given")

    active = [(i, c) for i, c in enumerate(components) if c.dimension not in config.disabled_dimensions]
    # term-at-a-time accumulation: doc_id -> [covered, exact_score, freq_sum, semantic_hits]
    acc: dict[str, list] = {}

    def slot(doc_id: str) -> list:
        entry = acc.get(doc_id)
        if entry is None:
            entry = acc[doc_id] = [set(), 0, 0, []]
        return entry

    for i, comp in active:
        inverted = index.postings[comp.dimension]
        plist = inverted.get(comp.content) if config.exact_enabled else None
        if plist:
            stats.exact_components.append(i)
            stats.postings_touched += 1
            for doc_id, count in plist:
                entry = slot(doc_id)
                entry[0].add(i)
                entry[1] += 1
                entry[2] += count
        elif config.semantic_enabled:
            matches = semantic_match(comp, index, embedder, config.tau, stats)
            if matches:
                stats.semantic_components.append(i)
            for label, sim in matches:
                stats.postings_touched += 1
                for doc_id, count in inverted[label]:
                    entry = slot(doc_id)
                    entry[0].add(i)
                    entry[2] += count
                    entry[3].append((i, label, sim))

    results = []
    for doc_id in sorted(acc):
        stats.scored_docs += 1
        covered, score, freq, hits = acc[doc_id]
        hits.sort(key=lambda h: (h[0], -h[2], h[1]))
        results.append(MatchResult(doc_id, frozenset(covered), score, tuple(hits), freq))
    return results
