"""Building a hypercube: dimension discovery and corpus indexing.

Discovery runs in four stages, each result persistable so a run can resume:
untyped entity pool -> k-means clusters of entity embeddings -> one
summarized candidate per cluster -> consolidated dimension list.
:func:`index_corpus` then extracts labels per (document, dimension).
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cube import (
    DimensionSchema,
    DocumentRecord,
    HypercubeIndex,
    default_extraction_template,
    normalize_dimension_name,
    normalize_label,
)
from .errors import BackendError, DataError, HypercubeError, ReplyParseError
from .extraction import extract_entities

log = logging.getLogger(__name__)

DEFAULT_K = 10
DEFAULT_SEED = 42
MAX_ITER = 100
DEFAULT_SAMPLE_SIZE = 30
DEFAULT_MAX_FAILURE_FRACTION = 0.05


class BuildError(DataError):
    def __init__(self, message: str, failures: dict[str, str] | None = None):
        self.failures = dict(failures or {})
        super().__init__(message)


def read_corpus(path: str | Path) -> list[DocumentRecord]:
    """Load ``corpus.jsonl``: one ``{"doc_id", "text"}`` object per line."""
    records = []
    seen = set()
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"corpus file not found: {path}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                doc_id, text = str(row["doc_id"]), row["text"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: expected {{\"doc_id\", \"text\"}}: {exc}") from exc
            if doc_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
            seen.add(doc_id)
            records.append(DocumentRecord(doc_id, text))
    return records


# -- stage 1: entity pool -----------------------------------------------------

@dataclass
class EntityPool:
    entities: dict[str, int] = field(default_factory=dict)
    failed: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entities)

    def to_dict(self) -> dict:
        return {"entities": dict(sorted(self.entities.items())), "failed": dict(sorted(self.failed.items()))}

    @classmethod
    def from_dict(cls, data: dict) -> EntityPool:
        return cls(dict(data["entities"]), dict(data.get("failed", {})))


def build_entity_pool(corpus: Sequence[DocumentRecord], backend, workers: int = 1) -> EntityPool:
    """Union of untyped extractions over the corpus; frequency = total mentions.

    A document whose extraction fails is recorded in ``failed`` and skipped.
    """
    if not corpus:
        raise DataError("empty corpus")

    def run(doc):
        try:
            return doc.doc_id, backend.extract_untyped(doc.text, doc_id=doc.doc_id), None
        except HypercubeError as exc:
            return doc.doc_id, None, str(exc)

    freq: Counter[str] = Counter()
    failed = {}
    for doc_id, labels, err in _map(run, corpus, workers):
        if err is not None:
            failed[doc_id] = err
            log.warning("entity extraction failed for %s: %s", doc_id, err)
            continue
        for label, n in labels.items():
            if normalize_label(label):
                freq[normalize_label(label)] += n
    return EntityPool(dict(sorted(freq.items())), failed)


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- stage 2: clustering ------------------------------------------------------

@dataclass
class ClusterSet:
    k: int
    entities: list[str]
    assignments: dict[str, int]
    centroids: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0

    def members(self, cluster_id: int) -> list[str]:
        return [e for e in self.entities if self.assignments[e] == cluster_id]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "entities": self.entities,
            "assignments": self.assignments,
            "centroids": self.centroids.tolist(),
            "inertia": self.inertia,
            "inertia_history": self.inertia_history,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ClusterSet:
        return cls(data["k"], list(data["entities"]), {k: int(v) for k, v in data["assignments"].items()},
                   np.asarray(data["centroids"], dtype=np.float64), float(data["inertia"]),
                   list(data.get("inertia_history", [])), int(data.get("n_iter", 0)))


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(points, points[chosen])[:, 0]
    while len(chosen) < k:
        total = closest.sum()
        if total <= 0:
            # every point coincides with a chosen centre; pick any unused index
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        else:
            nxt = int(rng.choice(n, p=closest / total))
        chosen.append(nxt)
        closest = np.minimum(closest, _sq_dists(points, points[[nxt]])[:, 0])
    return points[chosen].copy()


def lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int = MAX_ITER):
    """Lloyd iterations to an assignment fixpoint.

    Returns ``(assignments, centroids, inertia_history, n_iter)``. The
    history holds the inertia after each assignment step. An empty cluster
    keeps its previous centroid, so the sequence never increases.
    """
    centroids = centroids.copy()
    assign = None
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d = _sq_dists(points, centroids)
        new_assign = d.argmin(axis=1)
        history.append(float(d[np.arange(len(points)), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(len(centroids)):
            mask = assign == c
            if mask.any():
                centroids[c] = points[mask].mean(axis=0)
    return assign, centroids, history, n_iter


def cluster_entities(pool: EntityPool, embedder, k: int = DEFAULT_K, seed: int = DEFAULT_SEED,
                     max_iter: int = MAX_ITER) -> ClusterSet:
    if k <= 0:
        raise DataError(f"k must be positive, got {k}")
    if k > len(pool):
        raise DataError(f"k={k} exceeds the number of entities ({len(pool)})")
    entities = sorted(pool.entities)
    points = np.asarray(embedder.embed(entities), dtype=np.float64)
    rng = np.random.default_rng(seed)
    init = kmeans_plus_plus(points, k, rng)
    assign, centroids, history, n_iter = lloyd(points, init, max_iter)
    return ClusterSet(
        k=k,
        entities=entities,
        assignments={e: int(a) for e, a in zip(entities, assign)},
        centroids=centroids,
        inertia=history[-1],
        inertia_history=history,
        n_iter=n_iter,
    )


# -- stage 3: summaries -------------------------------------------------------

@dataclass
class DimensionCandidate:
    cluster_id: int
    summary: str
    proposed_name: str
    resolved: bool = True

    def __post_init__(self):
        name = normalize_dimension_name(self.proposed_name)
        if not name:
            raise DataError(f"candidate for cluster {self.cluster_id} has an empty name")
        self.proposed_name = name

    def to_dict(self) -> dict:
        return {"cluster_id": self.cluster_id, "summary": self.summary,
                "proposed_name": self.proposed_name, "resolved": self.resolved}

    @classmethod
    def from_dict(cls, data: dict) -> DimensionCandidate:
        return cls(int(data["cluster_id"]), data["summary"], data["proposed_name"], bool(data.get("resolved", True)))


def representatives(clusters: ClusterSet, cluster_id: int, embedder, sample_size: int) -> list[str]:
    """Up to ``sample_size`` members nearest the centroid (ties by name)."""
    members = clusters.members(cluster_id)
    if not members:
        return []
    vecs = np.asarray(embedder.embed(members), dtype=np.float64)
    d = ((vecs - clusters.centroids[cluster_id]) ** 2).sum(axis=1)
    order = sorted(range(len(members)), key=lambda i: (d[i], members[i]))
    return [members[i] for i in order[:sample_size]]


def summarize_clusters(clusters: ClusterSet, embedder, client,
                       sample_size: int = DEFAULT_SAMPLE_SIZE) -> list[DimensionCandidate]:
    from .llm import parse_json_reply

    out = []
    for cid in range(clusters.k):
        reps = representatives(clusters, cid, embedder, sample_size)
        if not reps:
            raise DataError(f"cluster {cid} is empty")
        try:
            if client is None:
                raise BackendError("no chat backend configured")
            raw = client.chat("summarize", entities="\n".join(f"- {e}" for e in reps))
            data = parse_json_reply(raw)
            name, summary = data["name"], data["summary"]
            if not isinstance(name, str) or not isinstance(summary, str) or not normalize_dimension_name(name):
                raise ValueError("name and summary must be non-empty strings")
            out.append(DimensionCandidate(cid, summary.strip(), name))
        except (BackendError, ValueError, KeyError, TypeError) as exc:
            log.warning("cluster %d left unresolved: %s", cid, exc)
            out.append(DimensionCandidate(cid, "entities such as " + ", ".join(reps[:5]),
                                          f"cluster_{cid}", resolved=False))
    return out


# -- stage 4: consolidation ---------------------------------------------------

@dataclass
class Consolidation:
    dimensions: list[DimensionSchema]
    fell_back: bool = False
    members: dict[str, list[str]] = field(default_factory=dict)


def _prompt_for(name: str, description: str, prompts) -> str:
    if prompts is not None and f"extract.{name}" in prompts:
        return prompts[f"extract.{name}"].text
    return default_extraction_template(name, description)


def _dedupe(candidates: Sequence[DimensionCandidate], prompts) -> Consolidation:
    dims: dict[str, DimensionSchema] = {}
    members: dict[str, list[str]] = {}
    for c in candidates:
        members.setdefault(c.proposed_name, []).append(c.proposed_name)
        if c.proposed_name not in dims:
            dims[c.proposed_name] = DimensionSchema(
                c.proposed_name, c.summary, _prompt_for(c.proposed_name, c.summary, prompts))
    return Consolidation(list(dims.values()), True, members)


def consolidate_dimensions(candidates: Sequence[DimensionCandidate], client) -> Consolidation:
    """Merge overlapping candidates into the final dimension list.

    If the model call fails or returns nothing usable, each distinct
    candidate name becomes a dimension (``fell_back`` is set).
    """
    from .llm import parse_json_reply

    if not candidates:
        raise DataError("no dimension candidates to consolidate")
    prompts = getattr(client, "prompts", None)
    listing = "\n".join(f"- {c.proposed_name}: {c.summary}" for c in candidates)
    try:
        if client is None:
            raise BackendError("no chat backend configured")
        raw = client.chat("consolidate", candidates=listing)
        data = parse_json_reply(raw)
        if not isinstance(data, list):
            raise ReplyParseError("consolidation reply must be a JSON array", raw)
    except (BackendError, ValueError) as exc:
        log.warning("consolidation fell back to one dimension per candidate: %s", exc)
        return _dedupe(candidates, prompts)

    dims: dict[str, DimensionSchema] = {}
    members: dict[str, list[str]] = {}
    for item in data:
        if not isinstance(item, dict) or not isinstance(item.get("name"), str):
            continue
        name = normalize_dimension_name(item["name"])
        if not name:
            continue
        description = str(item.get("description", "")).strip()
        group = [normalize_dimension_name(m) for m in item.get("members", []) if isinstance(m, str)]
        members.setdefault(name, [])
        members[name].extend(m for m in group if m and m not in members[name])
        if name not in dims:
            dims[name] = DimensionSchema(name, description, _prompt_for(name, description, prompts))
    if not dims:
        log.warning("consolidation reply named no dimensions; falling back")
        return _dedupe(candidates, prompts)
    if len(dims) > len(candidates):
        keep = list(dims)[:len(candidates)]
        dims = {n: dims[n] for n in keep}
        members = {n: members[n] for n in keep}
    return Consolidation(list(dims.values()), False, members)


# -- indexing -----------------------------------------------------------------

@dataclass
class BuildReport:
    docs_indexed: int = 0
    labels_per_dimension: dict[str, int] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "docs_indexed": self.docs_indexed,
            "labels_per_dimension": self.labels_per_dimension,
            "failures": dict(sorted(self.failures.items())),
        }


def index_corpus(corpus: Iterable[DocumentRecord], dimensions: Sequence[DimensionSchema], backend, *,
                 max_failure_fraction: float = DEFAULT_MAX_FAILURE_FRACTION,
                 workers: int = 1) -> tuple[HypercubeIndex, BuildReport]:
    """Extract labels for every (document, dimension) and index the corpus.

    Documents whose extraction fails are left out and listed in the report;
    the build itself fails only when the failed fraction exceeds
    ``max_failure_fraction``.
    """
    if not dimensions:
        raise DataError("no dimensions")
    corpus = list(corpus)

    def run(doc):
        labels = {}
        try:
            for dim in dimensions:
                labels[dim.name] = extract_entities(doc, dim, backend).labels
        except HypercubeError as exc:
            return doc, None, str(exc)
        return doc, labels, None

    index = HypercubeIndex(dimensions)
    report = BuildReport()
    for doc, labels, err in _map(run, corpus, workers):
        if err is not None:
            report.failures[doc.doc_id] = err
            continue
        index.add_document(DocumentRecord(doc.doc_id, doc.text, labels))
    report.docs_indexed = len(index)
    report.labels_per_dimension = index.label_counts()
    if corpus and len(report.failures) / len(corpus) > max_failure_fraction:
        raise BuildError(
            f"{len(report.failures)} of {len(corpus)} documents failed extraction "
            f"(limit {max_failure_fraction:.0%})",
            report.failures,
        )
    return index.freeze(), report


# -- full discovery pipeline --------------------------------------------------

def discover_dimensions(corpus: Sequence[DocumentRecord], backend, embedder, client, *,
                        k: int = DEFAULT_K, seed: int = DEFAULT_SEED,
                        sample_size: int = DEFAULT_SAMPLE_SIZE, workdir: str | Path | None = None,
                        workers: int = 1) -> Consolidation:
    """Run stages 1-4, reusing intermediates already present in ``workdir``."""
    work = Path(workdir) if workdir else None
    if work:
        work.mkdir(parents=True, exist_ok=True)

    def stage(name, compute, load):
        path = work / name if work else None
        if path is not None and path.is_file():
            log.info("reusing %s", path)
            return load(json.loads(path.read_text(encoding="utf-8")))
        value = compute()
        if path is not None:
            data = value.to_dict() if hasattr(value, "to_dict") else [v.to_dict() for v in value]
            path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                            encoding="utf-8")
        return value

    pool = stage("entity_pool.json", lambda: build_entity_pool(corpus, backend, workers), EntityPool.from_dict)
    clusters = stage(f"clusters_k{k}_seed{seed}.json", lambda: cluster_entities(pool, embedder, k, seed),
                     ClusterSet.from_dict)
    candidates = stage(f"candidates_k{k}_seed{seed}.json",
                       lambda: summarize_clusters(clusters, embedder, client, sample_size),
                       lambda data: [DimensionCandidate.from_dict(d) for d in data])
    return consolidate_dimensions(candidates, client)
