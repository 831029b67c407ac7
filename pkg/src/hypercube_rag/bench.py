"""Latency benchmark on synthetic noisy corpora.

Each corpus has a small labelled on-topic slice; every other document is
off-topic filler with no labels, the situation in which lookups in the cube
can skip most of the corpus. Index construction is not timed.
"""

from __future__ import annotations

import csv
import gc
import random
import statistics
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import BM25, DenseScan
from .cube import DimensionSchema, DocumentRecord, HypercubeIndex
from .engine import search
from .errors import DataError
from .retrieval import QueryComponent, RetrievalConfig, RetrievalStats, retrieve

METHODS = ("hypercube", "bm25", "dense-scan")
DEFAULT_SIZES = (500, 1000, 2500, 5000)

_SYLLABLES = ["ka", "lo", "mer", "vin", "tas", "dor", "ul", "bre", "sen", "qui", "pha", "ro", "zet", "mi", "gan"]
_FILLER = ["the", "report", "noted", "levels", "over", "during", "season", "data", "showed", "research",
           "team", "study", "found", "change", "pattern", "with", "after", "records", "region", "impact"]
_OFFTOPIC = ["ozone", "pollution", "aerosol", "emission", "smog", "particulate", "soot", "nitrogen",
             "sulfate", "haze", "chlorine", "stratosphere", "refrigerant", "exhaust"]
_DIMENSIONS = {
    "location": "places",
    "event": "named storms and other events",
    "theme": "scientific topics",
}


def _word(rng: random.Random, n: int) -> str:
    return "".join(rng.choice(_SYLLABLES) for _ in range(n))


def _vocabulary(rng: random.Random, size: int) -> dict[str, list[str]]:
    vocab = {}
    for dim in _DIMENSIONS:
        words: set[str] = set()
        while len(words) < size:
            words.add(f"{_word(rng, rng.randint(2, 3))} {_word(rng, 2)}" if rng.random() < 0.5
                      else _word(rng, rng.randint(2, 4)))
        vocab[dim] = sorted(words)
    return vocab


@dataclass
class SyntheticCorpus:
    size: int
    records: list[DocumentRecord]
    queries: list[list[QueryComponent]]
    relevant_ids: set[str] = field(default_factory=set)

    @property
    def texts(self) -> dict[str, str]:
        return {r.doc_id: r.text for r in self.records}


def synthetic_corpus(size: int, *, n_queries: int = 50, noise_fraction: float = 0.9,
                     vocab_size: int = 60, seed: int = 42) -> SyntheticCorpus:
    """Corpus of ``size`` documents, at least ``noise_fraction`` of them label-free.

    Queries take one label per dimension from a random on-topic document;
    every third query swaps its theme for a near-miss variant so the
    embedding fallback also runs.
    """
    if size < 1:
        raise DataError("corpus size must be positive")
    rng = random.Random(seed)
    vocab = _vocabulary(random.Random(seed ^ 0x5EED), vocab_size)
    # rounded first: 200 * (1 - 0.9) is 19.999... in floating point
    n_relevant = max(1, int(round(size * (1.0 - noise_fraction), 9)))
    relevant_slots = set(rng.sample(range(size), n_relevant))
    width = len(str(size))
    records = []
    relevant_ids = set()
    for i in range(size):
        doc_id = f"d{i:0{width}d}"
        if i in relevant_slots:
            labels = {dim: {lab: rng.randint(1, 3) for lab in rng.sample(vocab[dim], rng.randint(1, 2))}
                      for dim in _DIMENSIONS}
            words = []
            for multiset in labels.values():
                for lab, n in multiset.items():
                    words.extend([lab] * n)
            words.extend(rng.choices(_FILLER, k=rng.randint(20, 40)))
            rng.shuffle(words)
            records.append(DocumentRecord(doc_id, " ".join(words), labels))
            relevant_ids.add(doc_id)
        else:
            words = rng.choices(_FILLER + _OFFTOPIC, k=rng.randint(25, 50))
            records.append(DocumentRecord(doc_id, " ".join(words), {}))
    relevant = [r for r in records if r.doc_id in relevant_ids]
    queries = []
    for q in range(n_queries):
        doc = rng.choice(relevant)
        comps = []
        for dim in _DIMENSIONS:
            label = sorted(doc.labels[dim])[0]
            if dim == "theme" and q % 3 == 2:
                label = label + "s"
            comps.append(QueryComponent(dim, label))
        queries.append(comps)
    return SyntheticCorpus(size, records, queries, relevant_ids)


def build_index(corpus: SyntheticCorpus) -> HypercubeIndex:
    index = HypercubeIndex(DimensionSchema(d, desc) for d, desc in _DIMENSIONS.items())
    return index.add_documents(corpus.records).freeze()


def _time_ms(fn) -> float:
    start = time.perf_counter_ns()
    fn()
    return (time.perf_counter_ns() - start) / 1e6


@dataclass
class BenchRow:
    method: str
    corpus_size: int
    median_ms: float
    mean_candidates: float | None = None
    mean_scored: float | None = None
    counter_matches: bool | None = None

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def latency_bench(embedder, sizes: Sequence[int] = DEFAULT_SIZES, *, n_queries: int = 50,
                  repetitions: int = 3, methods: Sequence[str] = METHODS, noise_fraction: float = 0.9,
                  config: RetrievalConfig | None = None, seed: int = 42) -> list[BenchRow]:
    """Median per-query latency for each (method, corpus size).

    Each query is timed ``repetitions`` times and its median kept; the row
    reports the median over queries. For the hypercube the number of
    per-document score computations is also checked against the candidate
    count.
    """
    if len(sizes) < 3:
        raise DataError("latency_bench needs at least 3 corpus sizes")
    if repetitions < 3:
        raise DataError("latency_bench needs at least 3 repetitions")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise DataError(f"unknown methods: {', '.join(sorted(unknown))}")
    config = config or RetrievalConfig(top_k=5)
    rows = []
    for size in sizes:
        corpus = synthetic_corpus(size, n_queries=n_queries, noise_fraction=noise_fraction, seed=seed)
        index = build_index(corpus)
        runners = {}
        if "hypercube" in methods:
            runners["hypercube"] = lambda comps: search(None, index, config, embedder, components=comps,
                                                         explain_results=False)
        if "bm25" in methods:
            bm25 = BM25(corpus.texts)
            runners["bm25"] = lambda comps: bm25.rank(" ".join(c.content for c in comps), k=config.top_k)
        if "dense-scan" in methods:
            dense = DenseScan(index, embedder)
            runners["dense-scan"] = lambda comps: dense.search([c.content for c in comps], config.top_k)

        # warm caches (label embeddings, query embeddings) outside the timed region
        for comps in corpus.queries:
            for run in runners.values():
                run(comps)

        # methods are interleaved per query and repetition so drift in machine
        # load hits every method alike
        samples: dict[str, list[float]] = {m: [] for m in runners}
        gc_was_enabled = gc.isenabled()
        gc.disable()
        try:
            for comps in corpus.queries:
                reps: dict[str, list[float]] = {m: [] for m in runners}
                for _ in range(repetitions):
                    for method, run in runners.items():
                        reps[method].append(_time_ms(lambda: run(comps)))
                for method, times in reps.items():
                    samples[method].append(statistics.median(times))
        finally:
            if gc_was_enabled:
                gc.enable()

        for method, per_query in samples.items():
            row = BenchRow(method, size, statistics.median(per_query))
            if method == "hypercube":
                cands, scored, ok = [], [], True
                for comps in corpus.queries:
                    stats = RetrievalStats()
                    matches = retrieve(comps, index, config, embedder, stats=stats)
                    cands.append(len(matches))
                    scored.append(stats.scored_docs)
                    ok = ok and stats.scored_docs == len(matches)
                row.mean_candidates = statistics.fmean(cands)
                row.mean_scored = statistics.fmean(scored)
                row.counter_matches = ok
            rows.append(row)
    return rows


def write_csv(rows: Sequence[BenchRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "corpus_size", "median_ms"])
        for r in rows:
            writer.writerow([r.method, r.corpus_size, f"{r.median_ms:.6f}"])


def format_table(rows: Sequence[BenchRow]) -> str:
    sizes = sorted({r.corpus_size for r in rows})
    methods = list(dict.fromkeys(r.method for r in rows))
    cell = {(r.method, r.corpus_size): r.median_ms for r in rows}
    header = ["method", *(str(s) for s in sizes)]
    body = [[m, *(f"{cell[(m, s)]:.4f}" if (m, s) in cell else "-" for s in sizes)] for m in methods]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in [header, *body]]
    return "median retrieval time per query (ms) by corpus size\n" + "\n".join(lines)
