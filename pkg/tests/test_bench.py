from __future__ import annotations

import pytest

from hypercube_rag.bench import build_index, format_table, latency_bench, synthetic_corpus
from hypercube_rag.errors import DataError


def test_synthetic_corpus_shape():
    corpus = synthetic_corpus(200, n_queries=12, noise_fraction=0.9, seed=3)
    assert len(corpus.records) == 200 and len(corpus.relevant_ids) == 20
    assert all(not r.labels for r in corpus.records if r.doc_id not in corpus.relevant_ids)
    assert len(corpus.queries) == 12 and all(len(q) == 3 for q in corpus.queries)
    again = synthetic_corpus(200, n_queries=12, noise_fraction=0.9, seed=3)
    assert [r.to_dict() for r in again.records] == [r.to_dict() for r in corpus.records]


def test_index_reaches_only_relevant_docs():
    corpus = synthetic_corpus(100, seed=1)
    index = build_index(corpus)
    reachable = {d for _, _, plist in index.iter_postings() for d, _ in plist}
    assert reachable == corpus.relevant_ids


def test_latency_bench_small(toy):
    rows = latency_bench(toy, (50, 80, 120), n_queries=6)
    assert len(rows) == 9
    hc = [r for r in rows if r.method == "hypercube"]
    assert all(r.counter_matches and r.mean_scored < r.corpus_size for r in hc)
    assert "median retrieval time" in format_table(rows)


def test_latency_bench_argument_checks(toy):
    with pytest.raises(DataError):
        latency_bench(toy, (10, 20))
    with pytest.raises(DataError):
        latency_bench(toy, (10, 20, 30), repetitions=2)
    with pytest.raises(DataError):
        latency_bench(toy, (10, 20, 30), methods=("magic",))
    with pytest.raises(DataError):
        synthetic_corpus(0)
