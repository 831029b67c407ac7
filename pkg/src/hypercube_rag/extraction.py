"""Per-dimension label extraction from document text.

Two backends share one interface (``extract(text, dimension)`` and
``extract_untyped(text)``, each returning a label -> count multiset):

* :class:`GazetteerExtractor` counts phrases from a fixed lexicon. It is a
  pure function of its inputs, which is what offline tests and reproducible
  builds need.
* :class:`LLMExtractor` prompts a chat model per (document, dimension) and
  expects a JSON array of strings back.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from .cube import DimensionSchema, DocumentRecord, normalize_dimension_name, normalize_label
from .errors import BackendError, DataError, ReplyParseError

__all__ = [
    "ExtractionResult",
    "Gazetteer",
    "GazetteerExtractor",
    "LLMExtractor",
    "count_phrase",
    "extract_entities",
    "gazetteer_extract",
    "normalize_label",
]


@dataclass(frozen=True)
class ExtractionResult:
    doc_id: str
    dimension: str
    labels: dict[str, int]
    provenance: str  # "llm" | "gazetteer"


@lru_cache(maxsize=65536)
def _phrase_pattern(phrase: str) -> re.Pattern:
    body = r"\s+".join(re.escape(tok) for tok in phrase.split())
    return re.compile(rf"(?<!\w){body}(?!\w)")


def count_phrase(text: str, phrase: str) -> int:
    """Case-insensitive, whole-phrase, non-overlapping occurrences of ``phrase``."""
    phrase = normalize_label(phrase)
    if not phrase:
        return 0
    return sum(1 for _ in _phrase_pattern(phrase).finditer(text.casefold()))


@dataclass
class Gazetteer:
    """Per-dimension lexicon: canonical phrase -> list of alias surface forms."""

    entries: dict[str, dict[str, list[str]]] = field(default_factory=dict)

    def __post_init__(self):
        clean: dict[str, dict[str, list[str]]] = {}
        for dim, canon_map in self.entries.items():
            if isinstance(canon_map, list):
                canon_map = {c: [] for c in canon_map}
            dim_clean: dict[str, set[str]] = {}
            for canonical, aliases in canon_map.items():
                canon = normalize_label(canonical)
                if canon is None:
                    raise DataError(f"gazetteer dimension {dim!r}: empty canonical phrase {canonical!r}")
                forms = dim_clean.setdefault(canon, set())
                for alias in aliases or ():
                    norm = normalize_label(alias)
                    if norm and norm != canon:
                        forms.add(norm)
            clean[normalize_dimension_name(dim)] = {c: sorted(a) for c, a in sorted(dim_clean.items())}
        self.entries = clean
        self._surfaces: dict[str | None, list[tuple[str, str]]] = {}

    @classmethod
    def load(cls, path: str | Path) -> Gazetteer:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"gazetteer file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise DataError(f"{path}: expected an object keyed by dimension")
        return cls(data)

    def to_dict(self) -> dict:
        return {dim: {c: list(a) for c, a in m.items()} for dim, m in self.entries.items()}

    @property
    def dimensions(self) -> list[str]:
        return list(self.entries)

    def surface_forms(self, dimension: str | None) -> list[tuple[str, str]]:
        """(surface, canonical) pairs, longest surface first; ``None`` means all dimensions."""
        if dimension not in self._surfaces:
            dims = self.entries if dimension is None else [dimension]
            pairs: dict[str, str] = {}
            for dim in dims:
                for canon, aliases in self.entries.get(dim, {}).items():
                    for surface in (canon, *aliases):
                        pairs.setdefault(surface, canon)
            self._surfaces[dimension] = sorted(pairs.items(), key=lambda p: (-len(p[0]), p[0]))
        return self._surfaces[dimension]


def _match_surfaces(text: str, surfaces: list[tuple[str, str]]) -> dict[str, int]:
    folded = text.casefold()
    if not folded or not surfaces:
        return {}
    claimed = bytearray(len(folded))
    counts: Counter[str] = Counter()
    for surface, canonical in surfaces:
        if surface.split(" ", 1)[0] not in folded:
            continue
        for m in _phrase_pattern(surface).finditer(folded):
            start, end = m.span()
            if any(claimed[start:end]):
                continue
            claimed[start:end] = b"\x01" * (end - start)
            counts[canonical] += 1
    return dict(sorted(counts.items()))


def gazetteer_extract(text: str, dimension: str, gazetteer: Gazetteer) -> dict[str, int]:
    """Count gazetteer phrases of one dimension in ``text``.

    Surfaces are tried longest first and each claims its span, so with
    ``"new york"`` and ``"york"`` in the lexicon, "New York" counts once
    for ``"new york"`` and never for ``"york"``. Aliases count toward
    their canonical phrase.
    """
    return _match_surfaces(text, gazetteer.surface_forms(dimension))


class GazetteerExtractor:
    provenance = "gazetteer"

    def __init__(self, gazetteer: Gazetteer):
        self.gazetteer = gazetteer

    def extract(self, text: str, dimension: DimensionSchema, doc_id: str = "") -> dict[str, int]:
        return gazetteer_extract(text, dimension.name, self.gazetteer)

    def extract_untyped(self, text: str, doc_id: str = "") -> dict[str, int]:
        return _match_surfaces(text, self.gazetteer.surface_forms(None))


def _parse_string_list(raw: str, **context) -> list[str]:
    from .llm import parse_json_reply

    try:
        value = parse_json_reply(raw)
    except json.JSONDecodeError:
        raise ReplyParseError("extraction reply is not JSON", raw, **context) from None
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ReplyParseError("extraction reply must be a JSON array of strings", raw, **context)
    return value


def labels_from_reply(items: list[str], text: str) -> dict[str, int]:
    """Turn a model's label list into a multiset.

    A list with repeats is taken as one entry per mention. A deduplicated
    list gets its counts from the document instead: whole-phrase occurrences,
    at least 1.
    """
    labels = [lab for lab in (normalize_label(i) for i in items) if lab]
    counts = Counter(labels)
    if any(c > 1 for c in counts.values()):
        return dict(sorted(counts.items()))
    return {lab: max(1, count_phrase(text, lab)) for lab in sorted(counts)}


class LLMExtractor:
    provenance = "llm"

    def __init__(self, client):
        self.client = client

    def _ask(self, prompt: str, **context) -> list[str]:
        try:
            raw = self.client.complete(prompt)
        except BackendError as exc:
            raise BackendError(f"extraction call failed: {exc}", retryable=exc.retryable, **context) from exc
        return _parse_string_list(raw, **context)

    def extract(self, text: str, dimension: DimensionSchema, doc_id: str = "") -> dict[str, int]:
        if not text.strip():
            return {}
        prompt = self.client.prompts.extraction_prompt(dimension).render(document=text)
        items = self._ask(prompt, doc_id=doc_id, dimension=dimension.name)
        return labels_from_reply(items, text)

    def extract_untyped(self, text: str, doc_id: str = "") -> dict[str, int]:
        if not text.strip():
            return {}
        prompt = self.client.prompts["entities"].render(document=text)
        return labels_from_reply(self._ask(prompt, doc_id=doc_id), text)


def extract_entities(doc: DocumentRecord, dimension: DimensionSchema, backend) -> ExtractionResult:
    labels = backend.extract(doc.text, dimension, doc_id=doc.doc_id)
    return ExtractionResult(doc.doc_id, dimension.name, labels, backend.provenance)
