from __future__ import annotations

import json
import random

import pytest

from hypercube_rag import DimensionSchema, DocumentRecord, HypercubeIndex, ToyEmbedder
from hypercube_rag.errors import BackendError, DataError, ReplyParseError, UnknownDimensionError
from hypercube_rag.llm import LLMClient, ResponseCache, ScriptedBackend
from hypercube_rag.retrieval import (
    QueryComponent,
    RetrievalConfig,
    RetrievalStats,
    decompose_query,
    exact_score,
    fallback_decompose,
    parse_decomposition,
    retrieve,
    semantic_match,
)

from oracles import COS_RAINFALL_RAIN, DIMS, random_components, random_index, random_vocab, scan_candidates

GOLDEN_Q = "How much rainfall did Melbourne Beach, Florida receive from Tropical Storm Fay?"
GOLDEN = [QueryComponent("location", "Melbourne Beach"), QueryComponent("event", "Tropical Storm Fay"),
          QueryComponent("theme", "rainfall")]


# -- decomposition ------------------------------------------------------------

def test_scripted_decomposition_of_golden_question(casestudy_config, casestudy_index):
    comps = decompose_query(GOLDEN_Q, casestudy_index, casestudy_config.chat_client())
    assert comps == GOLDEN


def _decompose_with(reply, index):
    client = LLMClient(ScriptedBackend(), cache=ResponseCache())
    listing = "\n".join(f"- {d.name}: {d.description}" if d.description else f"- {d.name}" for d in index.dimensions)
    prompt = client.render("decompose", dimensions=listing, question="q?")
    client.backend.replies = ScriptedBackend.from_pairs([(prompt, reply)]).replies
    return decompose_query("q?", index, client)


def test_empty_decomposition_is_an_error(casestudy_index):
    with pytest.raises(DataError, match="no components"):
        _decompose_with("[]", casestudy_index)


def test_unknown_dimensions_are_dropped(casestudy_index):
    reply = json.dumps([{"dimension": "person", "content": "x"}, {"dimension": "Theme", "content": "Rain."}])
    assert _decompose_with(reply, casestudy_index) == [QueryComponent("theme", "rain")]


def test_line_format_accepted():
    raw = ("1. query_dimension: 'location'; query_content: 'Melbourne Beach';\n"
           "2. query_dimension: 'event'; query_content: 'Tropical Storm Fay';")
    assert parse_decomposition(raw) == [("location", "Melbourne Beach"), ("event", "Tropical Storm Fay")]
    with pytest.raises(ReplyParseError):
        parse_decomposition("I cannot help with that")


def test_decomposition_backend_error_points_to_fallback(casestudy_index):
    client = LLMClient(ScriptedBackend(), cache=ResponseCache())
    with pytest.raises(BackendError, match="fallback_decompose"):
        decompose_query(GOLDEN_Q, casestudy_index, client)


def test_fallback_decompose_uses_index_vocabulary(casestudy_index):
    comps = fallback_decompose(GOLDEN_Q, casestudy_index)
    # "rainfall" is an alias folded into "rain"; only stored labels can be found
    assert QueryComponent("location", "melbourne beach") in comps
    assert QueryComponent("event", "tropical storm fay") in comps
    assert QueryComponent("location", "florida") in comps
    assert fallback_decompose("nothing relevant here", casestudy_index) == []


def test_fallback_prefers_longest_phrase():
    index = HypercubeIndex([DimensionSchema("location")])
    index.add_document(DocumentRecord("1", "", {"location": {"new york": 1, "york": 1}}))
    assert fallback_decompose("trip to New York", index) == [QueryComponent("location", "new york")]


# -- scoring --------------------------------------------------------------------

def test_exact_score_examples(casestudy_index):
    comps = [QueryComponent("location", "melbourne beach"), QueryComponent("event", "tropical storm fay"),
             QueryComponent("theme", "rain")]
    assert exact_score(casestudy_index.doc_store["565"], comps) == 3
    assert exact_score(casestudy_index.doc_store["246"], comps) == 1
    assert exact_score(casestudy_index.doc_store["565"], []) == 0


def test_semantic_match_self_similarity(casestudy_index, toy):
    hits = semantic_match(QueryComponent("theme", "rain"), casestudy_index, toy, tau=0.99)
    assert hits[0] == ("rain", 1.0)


def test_frozen_rainfall_similarity(casestudy_index, toy):
    hits = dict(semantic_match(QueryComponent("theme", "rainfall"), casestudy_index, toy, tau=0.0))
    assert hits["rain"] == round(COS_RAINFALL_RAIN, 9)


def test_exact_hit_suppresses_semantic_fallback(casestudy_index, toy):
    stats = RetrievalStats()
    retrieve([QueryComponent("theme", "rain")], casestudy_index, RetrievalConfig(tau=0.0), toy, stats=stats)
    assert stats.semantic_calls == 0 and stats.exact_components == [0]
    stats = RetrievalStats()
    matches = retrieve([QueryComponent("theme", "rainfall")], casestudy_index, RetrievalConfig(tau=0.5), toy,
                       stats=stats)
    assert stats.semantic_calls == 1
    assert all(m.exact_score == 0 for m in matches)
    assert {h[1] for m in matches for h in m.semantic_hits} >= {"rain"}


def test_retrieve_errors(casestudy_index, toy):
    with pytest.raises(DataError):
        retrieve([], casestudy_index, RetrievalConfig(), toy)
    with pytest.raises(UnknownDimensionError):
        retrieve([QueryComponent("person", "x")], casestudy_index, RetrievalConfig(), toy)
    with pytest.raises(DataError, match="embedder"):
        retrieve([QueryComponent("theme", "x")], casestudy_index, RetrievalConfig(), None)
    with pytest.raises(DataError):
        RetrievalConfig(tau=1.5)
    with pytest.raises(DataError):
        RetrievalConfig(exact_enabled=False, semantic_enabled=False)


def test_all_dimensions_disabled_gives_nothing(casestudy_index, toy):
    config = RetrievalConfig(disabled_dimensions=frozenset({"location", "event", "theme"}))
    assert retrieve(GOLDEN, casestudy_index, config, toy) == []


def test_scored_docs_equals_candidates(casestudy_index, toy):
    stats = RetrievalStats()
    matches = retrieve(GOLDEN, casestudy_index, RetrievalConfig(tau=0.5), toy, stats=stats)
    assert stats.scored_docs == len(matches) < len(casestudy_index)


@pytest.mark.parametrize("seed", range(40))
def test_tau_nesting(seed, toy):
    rng = random.Random(seed)
    vocab = random_vocab(rng)
    index = random_index(rng, 80, vocab)
    comps = random_components(rng, vocab, rng.randint(1, 4))
    previous = None
    for tau in (0.5, 0.7, 0.9, 0.95, 1.0):
        cands = {m.doc_id for m in retrieve(comps, index, RetrievalConfig(tau=tau), toy)}
        if previous is not None:
            assert cands <= previous
        previous = cands


@pytest.mark.parametrize("seed", range(40))
def test_candidates_match_full_scan(seed, toy):
    rng = random.Random(1000 + seed)
    vocab = random_vocab(rng)
    index = random_index(rng, rng.randint(0, 120), vocab)
    comps = random_components(rng, vocab, rng.randint(1, 5))
    tau = rng.choice([0.0, 0.7, 0.9, 1.0])
    got = {m.doc_id for m in retrieve(comps, index, RetrievalConfig(tau=tau), toy)}
    assert got == scan_candidates(index, comps, toy, tau=tau)


@pytest.mark.parametrize("seed", range(30))
def test_adding_a_matching_label_never_lowers_exact_score(seed):
    rng = random.Random(seed)
    vocab = random_vocab(rng)
    comps = random_components(rng, vocab, 3)
    labels = {d: {rng.choice(vocab[d]): 1} for d in DIMS}
    before = DocumentRecord("x", "", labels)
    comp = rng.choice(comps)
    grown = {d: dict(m) for d, m in labels.items()}
    grown.setdefault(comp.dimension, {})[comp.content] = 1
    after = DocumentRecord("x", "", grown)
    assert exact_score(after, comps) >= exact_score(before, comps)


def test_query_component_normalizes():
    assert QueryComponent("Theme", "  Rain. ") == QueryComponent("theme", "rain")
    with pytest.raises(DataError):
        QueryComponent("theme", "...")
