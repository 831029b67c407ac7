"""Hypercube data model: dimensions, labelled documents, and the inverted index.

Cube cells are never materialised. Each dimension keeps an inverted map
``label -> [(doc_id, count), ...]`` and a (partial) cell is the intersection
of the posting lists of its assigned coordinates.
"""

from __future__ import annotations

import bisect
import json
import os
import re
import unicodedata
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, DuplicateDocumentError, UnknownDimensionError

DOCUMENT_PLACEHOLDER = "{document}"

SCHEMA_FILE = "schema.json"
DOCS_FILE = "docs.jsonl"
POSTINGS_FILE = "postings.jsonl"

_NAME_RE = re.compile(r"[^\w]+")


def _is_edge_junk(ch: str) -> bool:
    return ch.isspace() or unicodedata.category(ch).startswith("P")


def _normalize_once(raw: str) -> str:
    text = " ".join(raw.casefold().split())
    start, end = 0, len(text)
    while start < end and _is_edge_junk(text[start]):
        start += 1
    while end > start and _is_edge_junk(text[end - 1]):
        end -= 1
    return text[start:end]


def normalize_label(raw: str) -> str | None:
    """Canonical form of a label, or ``None`` if nothing survives.

    Case-folds, collapses internal whitespace and strips punctuation and
    whitespace from both ends. Iterated to a fixpoint so the result is
    idempotent even for the odd Unicode character whose case-folding
    exposes new edge punctuation.
    """
    if raw is None:
        return None
    text = _normalize_once(str(raw))
    while True:
        again = _normalize_once(text)
        if again == text:
            break
        text = again
    return text or None


def normalize_dimension_name(raw: str) -> str:
    """Identifier form used for dimension names: ``"Money / Finance" -> "money_finance"``."""
    label = normalize_label(raw) or ""
    return _NAME_RE.sub("_", label).strip("_")


@dataclass(frozen=True)
class DimensionSchema:
    name: str
    description: str = ""
    prompt_template: str = ""

    def __post_init__(self):
        name = normalize_dimension_name(self.name)
        if not name:
            raise DataError(f"dimension name {self.name!r} is empty after normalization")
        object.__setattr__(self, "name", name)
        if not self.prompt_template:
            object.__setattr__(self, "prompt_template", default_extraction_template(name, self.description))
        n = self.prompt_template.count(DOCUMENT_PLACEHOLDER)
        if n != 1:
            raise DataError(
                f"prompt template for dimension {name!r} must contain exactly one "
                f"{DOCUMENT_PLACEHOLDER} placeholder, found {n}"
            )

    def to_dict(self) -> dict:
        return {"name": self.name, "description": self.description, "prompt_template": self.prompt_template}

    @classmethod
    def from_dict(cls, data: Mapping) -> DimensionSchema:
        return cls(data["name"], data.get("description", ""), data.get("prompt_template", ""))


def default_extraction_template(name: str, description: str = "") -> str:
    what = description.strip() or f"{name.replace('_', ' ')} entities"
    return (
        f"Extract every entity or short phrase belonging to the '{name}' dimension "
        f"({what}) from the document below. Copy each one as it appears in the text; "
        "list an entity once per mention.\n"
        'Reply with a JSON array of strings only, for example ["first", "second"]. '
        "Reply [] if there are none.\n\n"
        f"Document:\n{DOCUMENT_PLACEHOLDER}"
    )


def _clean_labels(labels: Mapping[str, Mapping[str, int]] | None) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = {}
    for dim, multiset in (labels or {}).items():
        counts: dict[str, int] = {}
        for raw, count in multiset.items():
            label = normalize_label(raw)
            if label is None:
                continue
            count = int(count)
            if count < 1:
                raise DataError(f"label {raw!r} on dimension {dim!r} has count {count}; counts must be >= 1")
            counts[label] = counts.get(label, 0) + count
        if counts:
            out[normalize_dimension_name(dim)] = dict(sorted(counts.items()))
    return dict(sorted(out.items()))


@dataclass
class DocumentRecord:
    """A document and its per-dimension label multisets (its cube-cell assignment)."""

    doc_id: str
    text: str = ""
    labels: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        self.doc_id = str(self.doc_id)
        if not self.doc_id:
            raise DataError("doc_id must be non-empty")
        self.labels = _clean_labels(self.labels)

    def to_dict(self) -> dict:
        return {"doc_id": self.doc_id, "text": self.text, "labels": self.labels}

    @classmethod
    def from_dict(cls, data: Mapping) -> DocumentRecord:
        return cls(str(data["doc_id"]), data.get("text", ""), data.get("labels") or {})


@dataclass(frozen=True)
class CubeCellRef:
    """A partial cube coordinate; dimensions left out act as wildcards."""

    assignments: Mapping[str, str]

    def __post_init__(self):
        if not self.assignments:
            raise DataError("a cube cell must assign at least one dimension")


class HypercubeIndex:
    """Per-dimension inverted maps plus the document store.

    Append-only while building; call :meth:`freeze` (``load`` does it for
    you) before serving queries from several threads.
    """

    def __init__(self, dimensions: Iterable[DimensionSchema]):
        self.dimensions: tuple[DimensionSchema, ...] = tuple(dimensions)
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise DataError(f"duplicate dimension names: {', '.join(dupes)}")
        self._dim_names = names
        self.postings: dict[str, dict[str, list[tuple[str, int]]]] = {n: {} for n in names}
        self.doc_store: dict[str, DocumentRecord] = {}
        self._frozen = False
        self._label_cache: dict = {}

    # -- schema ------------------------------------------------------------

    @property
    def dimension_names(self) -> list[str]:
        return list(self._dim_names)

    def dimension(self, name: str) -> DimensionSchema:
        for dim in self.dimensions:
            if dim.name == name:
                return dim
        raise UnknownDimensionError(name, self._dim_names)

    def _check_dimension(self, name: str) -> dict[str, list[tuple[str, int]]]:
        try:
            return self.postings[name]
        except KeyError:
            raise UnknownDimensionError(name, self._dim_names) from None

    # -- build -------------------------------------------------------------

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> HypercubeIndex:
        self._frozen = True
        return self

    def add_document(self, record: DocumentRecord) -> HypercubeIndex:
        if self._frozen:
            raise DataError("index is frozen; build a new index to add documents")
        if record.doc_id in self.doc_store:
            raise DuplicateDocumentError(record.doc_id)
        for dim in record.labels:
            self._check_dimension(dim)
        self.doc_store[record.doc_id] = record
        for dim, multiset in record.labels.items():
            inverted = self.postings[dim]
            for label, count in multiset.items():
                bisect.insort(inverted.setdefault(label, []), (record.doc_id, count))
        self._label_cache.clear()
        return self

    def add_documents(self, records: Iterable[DocumentRecord]) -> HypercubeIndex:
        for record in records:
            self.add_document(record)
        return self

    @classmethod
    def merge(cls, shards: Iterable[HypercubeIndex]) -> HypercubeIndex:
        """Combine independently built shards that share one schema."""
        shards = list(shards)
        if not shards:
            raise DataError("nothing to merge")
        schema = shards[0].dimensions
        for shard in shards[1:]:
            if shard.dimensions != schema:
                raise DataError("cannot merge shards with different dimension schemas")
        merged = cls(schema)
        records = sorted((r for s in shards for r in s.doc_store.values()), key=lambda r: r.doc_id)
        return merged.add_documents(records)

    # -- queries -----------------------------------------------------------

    def lookup(self, dimension: str, label: str) -> list[tuple[str, int]]:
        """Posting list for one (dimension, label) coordinate, sorted by doc_id."""
        return list(self._check_dimension(dimension).get(label, ()))

    def has_label(self, dimension: str, label: str) -> bool:
        return label in self._check_dimension(dimension)

    def labels(self, dimension: str) -> list[str]:
        return sorted(self._check_dimension(dimension))

    def cell_docs(self, cell: CubeCellRef | Mapping[str, str]) -> set[str]:
        assignments = cell.assignments if isinstance(cell, CubeCellRef) else CubeCellRef(cell).assignments
        result: set[str] | None = None
        # validate every dimension before short-circuiting on an empty cell
        for dim in assignments:
            self._check_dimension(dim)
        for dim, label in assignments.items():
            docs = {doc_id for doc_id, _ in self.postings[dim].get(label, ())}
            result = docs if result is None else result & docs
            if not result:
                return set()
        return result or set()

    def __len__(self) -> int:
        return len(self.doc_store)

    def __contains__(self, doc_id: object) -> bool:
        return doc_id in self.doc_store

    def iter_postings(self) -> Iterator[tuple[str, str, list[tuple[str, int]]]]:
        for dim in self._dim_names:
            for label in sorted(self.postings[dim]):
                yield dim, label, self.postings[dim][label]

    def label_counts(self) -> dict[str, int]:
        return {dim: len(self.postings[dim]) for dim in self._dim_names}

    # -- persistence -------------------------------------------------------

    def save(self, directory: str | os.PathLike) -> Path:
        """Write ``schema.json``, ``docs.jsonl`` and ``postings.jsonl``.

        Output is canonical (sorted keys, sorted docs, sorted postings), so
        equal indexes serialize to identical bytes whatever the insertion order.
        """
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        schema = {"dimensions": [d.to_dict() for d in self.dimensions]}
        _write_text(out / SCHEMA_FILE, _dumps(schema, indent=2) + "\n")
        _write_text(
            out / DOCS_FILE,
            "".join(_dumps(self.doc_store[i].to_dict()) + "\n" for i in sorted(self.doc_store)),
        )
        _write_text(
            out / POSTINGS_FILE,
            "".join(
                _dumps({"dimension": dim, "label": label, "postings": [[d, c] for d, c in plist]}) + "\n"
                for dim, label, plist in self.iter_postings()
            ),
        )
        return out

    @classmethod
    def load(cls, directory: str | os.PathLike) -> HypercubeIndex:
        src = Path(directory)
        for name in (SCHEMA_FILE, DOCS_FILE):
            if not (src / name).is_file():
                raise DataError(f"{src} is not an index directory (missing {name})")
        schema = json.loads((src / SCHEMA_FILE).read_text(encoding="utf-8"))
        index = cls(DimensionSchema.from_dict(d) for d in schema["dimensions"])
        with open(src / DOCS_FILE, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    index.add_document(DocumentRecord.from_dict(json.loads(line)))
                except (ValueError, KeyError) as exc:
                    raise DataError(f"{src / DOCS_FILE}:{lineno}: {exc}") from exc
        postings_path = src / POSTINGS_FILE
        if postings_path.is_file():
            stored = {}
            with open(postings_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        row = json.loads(line)
                        stored[(row["dimension"], row["label"])] = [tuple(p) for p in row["postings"]]
            rebuilt = {(dim, label): plist for dim, label, plist in index.iter_postings()}
            if stored != rebuilt:
                raise DataError(f"{postings_path} is inconsistent with {src / DOCS_FILE}")
        return index.freeze()


def _dumps(obj, indent=None) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=indent,
                      separators=(",", ": ") if indent else (",", ":"))


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def load_schema(path: str | os.PathLike) -> list[DimensionSchema]:
    """Read a dimension list from a ``schema.json`` (object or bare list)."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"schema file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    if isinstance(data, dict):
        data = data.get("dimensions", [])
    dims = [DimensionSchema.from_dict(d) if isinstance(d, dict) else DimensionSchema(d) for d in data]
    if not dims:
        raise DataError(f"{path}: no dimensions")
    return dims
