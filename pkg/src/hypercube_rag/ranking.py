"""Coverage ranking of retrieved candidates and per-document explanations.

Documents covering every query component come first (the full tier). The
rest are filled in by how many components they cover (the partial tier).
Inside and across tiers the order is the total order

    (coverage desc, exact_score desc, freq_sum desc, doc_id asc)

so equal inputs always give equal outputs.
"""

from __future__ import annotations

import heapq
from collections.abc import Sequence
from dataclasses import dataclass

from .cube import HypercubeIndex
from .errors import DataError
from .retrieval import MatchResult, QueryComponent

FULL = "full"
PARTIAL = "partial"


@dataclass(frozen=True)
class RankedEntry:
    doc_id: str
    coverage: int
    exact_score: int
    freq_sum: int
    tier: str
    match: MatchResult

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "coverage": self.coverage,
            "exact_score": self.exact_score,
            "freq_sum": self.freq_sum,
            "tier": self.tier,
        }


@dataclass(frozen=True)
class RankedList:
    entries: tuple[RankedEntry, ...] = ()
    n_components: int = 0

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def doc_ids(self) -> list[str]:
        return [e.doc_id for e in self.entries]


def sort_key(m: MatchResult):
    return (-m.coverage, -m.exact_score, -m.freq_sum, m.doc_id)


def _entry(m: MatchResult, n_components: int) -> RankedEntry:
    tier = FULL if m.coverage == n_components else PARTIAL
    return RankedEntry(m.doc_id, m.coverage, m.exact_score, m.freq_sum, tier, m)


def rank(candidates: Sequence[MatchResult], n_components: int, top_k: int) -> RankedList:
    if n_components < 1:
        raise DataError("n_components must be at least 1")
    if top_k < 1:
        raise DataError("top_k must be at least 1")
    ids = [m.doc_id for m in candidates]
    if len(set(ids)) != len(ids):
        raise DataError("candidates must be unique by doc_id")
    # coverage leads the key and never exceeds n_components, so the full tier sorts first
    chosen = heapq.nsmallest(top_k, (m for m in candidates if m.covered), key=sort_key)
    return RankedList(tuple(_entry(m, n_components) for m in chosen), n_components)


def unranked(candidates: Sequence[MatchResult], n_components: int, top_k: int) -> RankedList:
    """Ablation path: first ``top_k`` covering candidates in doc_id order, no coverage ordering."""
    pool = sorted((m for m in candidates if m.coverage > 0), key=lambda m: m.doc_id)[:top_k]
    return RankedList(tuple(_entry(m, n_components) for m in pool), n_components)


def explain(match: MatchResult | RankedEntry, index: HypercubeIndex,
            components: Sequence[QueryComponent]) -> dict:
    """Which stored labels made a document match, with their counts.

    Returns ``{"doc_id", "labels": {dim: {label: count}}, "satisfies":
    {dim: {label: [component indexes]}}}``; dimensions without a matched
    label are omitted.
    """
    if isinstance(match, RankedEntry):
        match = match.match
    try:
        doc = index.doc_store[match.doc_id]
    except KeyError:
        raise DataError(f"unknown document {match.doc_id!r}") from None
    satisfied: dict[tuple[str, str], set[int]] = {}
    for i in match.covered:
        comp = components[i]
        if comp.content in doc.labels.get(comp.dimension, ()):
            satisfied.setdefault((comp.dimension, comp.content), set()).add(i)
    for i, label, _ in match.semantic_hits:
        satisfied.setdefault((components[i].dimension, label), set()).add(i)

    labels: dict[str, dict[str, int]] = {}
    satisfies: dict[str, dict[str, list[int]]] = {}
    for dim in index.dimension_names:
        for (d, label), idxs in sorted(satisfied.items()):
            if d != dim:
                continue
            labels.setdefault(dim, {})[label] = doc.labels[dim][label]
            satisfies.setdefault(dim, {})[label] = sorted(idxs)
    return {"doc_id": doc.doc_id, "labels": labels, "satisfies": satisfies}


def format_table(explanations: Sequence[dict], dimensions: Sequence[str]) -> str:
    """Aligned text table: one row per document, one column per dimension."""
    dims = [d for d in dimensions if any(d in e["labels"] for e in explanations)] or list(dimensions)
    header = ["Doc", *(d.capitalize() for d in dims)]
    rows = [header]
    for e in explanations:
        row = [str(e["doc_id"])]
        for d in dims:
            cell = e["labels"].get(d)
            row.append(", ".join(f"'{lab}': {n}" for lab, n in cell.items()) if cell else "--")
        rows.append(row)
    widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
    lines = [" | ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)
