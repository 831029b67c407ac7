from __future__ import annotations

import random

import pytest

from hypercube_rag import RetrievalConfig, search
from hypercube_rag.errors import DataError
from hypercube_rag.ranking import FULL, PARTIAL, explain, format_table, rank, unranked
from hypercube_rag.retrieval import MatchResult, QueryComponent

from oracles import CASESTUDY_TAU, sort_oracle

GOLDEN = [QueryComponent("location", "melbourne beach"), QueryComponent("event", "tropical storm fay"),
          QueryComponent("theme", "rainfall")]


def m(doc_id, covered, exact, freq):
    return MatchResult(doc_id, frozenset(covered), exact, (), freq)


def random_matches(rng, n_components):
    out = []
    for i in range(rng.randint(0, 25)):
        covered = {c for c in range(n_components) if rng.random() < 0.5}
        exact = rng.randint(0, len(covered))
        out.append(m(f"d{rng.randint(0, 999):03d}-{i}", covered, exact, rng.randint(0, 6) if covered else 0))
    return out


def test_full_tier_first_then_coverage():
    cands = [m("a", {0}, 1, 9), m("b", {0, 1, 2}, 1, 1), m("c", {0, 1}, 2, 2), m("d", {0, 1, 2}, 3, 1)]
    ranked = rank(cands, 3, 10)
    assert ranked.doc_ids == ["d", "b", "c", "a"]
    assert [e.tier for e in ranked] == [FULL, FULL, PARTIAL, PARTIAL]


def test_ties_broken_by_freq_then_doc_id():
    cands = [m("b", {0}, 1, 2), m("a", {0}, 1, 2), m("c", {0}, 1, 3)]
    assert rank(cands, 1, 3).doc_ids == ["c", "a", "b"]


def test_uncovered_documents_are_dropped():
    assert rank([m("a", set(), 0, 0)], 2, 5).doc_ids == []


def test_rank_argument_checks():
    with pytest.raises(DataError):
        rank([], 0, 5)
    with pytest.raises(DataError):
        rank([], 1, 0)
    with pytest.raises(DataError, match="unique"):
        rank([m("a", {0}, 1, 1), m("a", {0}, 1, 1)], 1, 5)


@pytest.mark.parametrize("seed", range(200))
def test_rank_invariants(seed):
    rng = random.Random(seed)
    n = rng.randint(1, 5)
    cands = random_matches(rng, n)
    top_k = rng.randint(1, 12)
    ranked = rank(cands, n, top_k)
    ids = ranked.doc_ids
    assert ids == sort_oracle(cands, n, top_k)
    assert len(ids) == len(set(ids)) == min(top_k, sum(1 for c in cands if c.covered))
    tiers = [e.tier for e in ranked]
    assert tiers == sorted(tiers, key=lambda t: t != FULL)
    # permuting the input never changes the output
    shuffled = cands[:]
    rng.shuffle(shuffled)
    assert rank(shuffled, n, top_k).doc_ids == ids


def test_unranked_keeps_doc_id_order():
    cands = [m("b", {0, 1}, 2, 5), m("a", {0}, 0, 1), m("c", set(), 0, 0)]
    assert unranked(cands, 2, 5).doc_ids == ["a", "b"]


def test_golden_ranking(casestudy_index, toy):
    result = search(None, casestudy_index, RetrievalConfig(top_k=5, tau=CASESTUDY_TAU), toy, components=GOLDEN)
    assert result.doc_ids[0] == "565"
    assert result.ranked[0].tier == FULL and result.ranked[0].coverage == 3
    assert result.explanations[0]["labels"] == {
        "location": {"melbourne beach": 1}, "event": {"tropical storm fay": 1}, "theme": {"rain": 5}}
    assert result.explanations[0]["satisfies"]["theme"] == {"rain": [2]}


def test_golden_ranking_at_strict_tau(casestudy_index, toy):
    result = search(None, casestudy_index, RetrievalConfig(top_k=5, tau=0.9), toy, components=GOLDEN)
    assert result.ranked[0].doc_id == "565" and result.ranked[0].tier == PARTIAL
    assert result.ranked[0].coverage == 2


def test_four_component_order(casestudy_index, toy):
    comps = GOLDEN + [QueryComponent("location", "florida")]
    result = search(None, casestudy_index, RetrievalConfig(top_k=5, tau=CASESTUDY_TAU), toy, components=comps)
    rows = [(e.doc_id, e.coverage, e.exact_score, e.freq_sum) for e in result.ranked]
    assert rows == [("565", 3, 2, 7), ("246", 2, 2, 2), ("451", 1, 1, 1), ("535", 1, 1, 1), ("364", 1, 0, 1)]


def test_explanations_only_cite_stored_labels(casestudy_index, toy):
    result = search(None, casestudy_index, RetrievalConfig(top_k=10, tau=0.3), toy, components=GOLDEN)
    for entry, expl in zip(result.ranked, result.explanations):
        stored = casestudy_index.doc_store[entry.doc_id].labels
        for dim, labels in expl["labels"].items():
            for label, count in labels.items():
                assert stored[dim][label] == count
        assert expl == explain(entry, casestudy_index, GOLDEN)


def test_explain_unknown_doc(casestudy_index):
    with pytest.raises(DataError):
        explain(m("nope", {0}, 1, 1), casestudy_index, GOLDEN)


def test_format_table():
    rows = [{"doc_id": "565", "labels": {"location": {"melbourne beach": 1}, "theme": {"rain": 5}}},
            {"doc_id": "246", "labels": {"location": {"florida": 1}}}]
    table = format_table(rows, ["location", "event", "theme"])
    lines = table.splitlines()
    assert lines[0].split(" | ")[0].strip() == "Doc"
    assert "Event" not in lines[0]
    assert "'rain': 5" in lines[2] and lines[3].rstrip().endswith("--")
