from __future__ import annotations

import json
import random
from fractions import Fraction

import pytest

from hypercube_rag import BM25, DenseScan, ToyEmbedder, bm25_rank
from hypercube_rag.errors import DataError, ReplyParseError
from hypercube_rag.llm import LLMClient, ResponseCache, ScriptedBackend
from hypercube_rag.metrics import (
    EvalRecord,
    evaluate,
    llm_judge,
    precision_at_k,
    read_qa,
    recall_at_k,
    semantic_score,
    token_f1,
    token_f1_exact,
)

from oracles import reference_bm25

WORDS = ["rain", "storm", "fay", "florida", "beach", "erosion", "drought", "the", "a", "of", "Rain."]


# -- BM25 -----------------------------------------------------------------------

def test_bm25_trivial_cases():
    assert bm25_rank("rain", {"a": "no match here"}) == [("a", 0.0)]
    ranked = bm25_rank("rain", {"b": "rain rain", "a": "rain", "c": "sun"})
    assert [d for d, _ in ranked] == ["b", "a", "c"]
    with pytest.raises(DataError):
        BM25({"a": "x"}).scores("...")
    with pytest.raises(DataError):
        BM25({"a": "x"}, k1=0)


@pytest.mark.parametrize("seed", range(100))
def test_bm25_matches_reference(seed):
    rng = random.Random(seed)
    corpus = {f"d{i}": " ".join(rng.choices(WORDS, k=rng.randint(0, 30))) for i in range(rng.randint(1, 30))}
    query = " ".join(rng.choices(WORDS, k=rng.randint(1, 4)))
    if not any(w.strip(".").lower() for w in query.split()):
        return
    ref = reference_bm25(query, corpus)
    got = BM25(corpus).rank(query)
    assert [d for d, _ in got] == [d for d, _ in ref]
    for (_, a), (_, b) in zip(got, ref):
        assert a == pytest.approx(b, abs=1e-9)
    k = rng.randint(1, 5)
    assert [d for d, _ in BM25(corpus).rank(query, k=k)] == [d for d, _ in ref[:k]]


def test_dense_scan_finds_labelled_doc(casestudy_index):
    dense = DenseScan(casestudy_index, ToyEmbedder())
    top = dense.search(["melbourne beach", "tropical storm fay", "rain"], 3)
    assert top[0][0] == "565" and len(top) == 3
    with pytest.raises(DataError):
        dense.search([], 3)


# -- metrics --------------------------------------------------------------------

def test_precision_recall_worked_example():
    assert precision_at_k(["565", "246", "535"], {"565"}, 3) == pytest.approx(1 / 3)
    assert recall_at_k(["565", "246", "535"], {"565"}, 3) == 1.0
    assert precision_at_k([], {"1"}, 5) == 0.0
    assert recall_at_k(["a"], set(), 1) == 1.0
    with pytest.raises(DataError):
        recall_at_k(["a"], set(), 1, empty_gold="error")
    with pytest.raises(DataError):
        precision_at_k(["a"], {"a"}, 0)


def test_token_f1_examples():
    assert token_f1_exact("25.28 inches", "25.28 inches") == 1
    assert token_f1_exact("12.95 inches of precipitation", "12.95 inches") == Fraction(2, 3)
    assert token_f1_exact("", "") == 1 and token_f1_exact("a", "") == 0
    assert token_f1("The rain", "rain") == pytest.approx(2 / 3)


@pytest.mark.parametrize("seed", range(50))
def test_token_f1_symmetric_and_bounded(seed):
    rng = random.Random(seed)
    a = " ".join(rng.choices(WORDS, k=rng.randint(0, 8)))
    b = " ".join(rng.choices(WORDS, k=rng.randint(0, 8)))
    assert token_f1_exact(a, b) == token_f1_exact(b, a)
    assert 0 <= token_f1_exact(a, b) <= 1


def test_semantic_score_range():
    toy = ToyEmbedder()
    assert semantic_score("rain", "rain", toy) == 1.0
    assert 0.0 <= semantic_score("rain", "zzqx", toy) <= 1.0


def judge_client(*replies):
    client = LLMClient(ScriptedBackend(), cache=ResponseCache())
    prompt = client.render("judge", question="q", gold_answer="g", predicted_answer="p")
    from hypercube_rag.metrics import JUDGE_REASK

    prompts = [prompt, prompt + JUDGE_REASK]
    client.backend.replies = ScriptedBackend.from_pairs(zip(prompts, replies)).replies
    return client


def test_judge_parses_reply():
    verdict = llm_judge("q", "g", "p", judge_client('{"correctness": 1, "completeness": 0, "explanation": "x"}'))
    assert verdict == {"status": "ok", "correctness": 1, "completeness": 0, "explanation": "x"}


def test_judge_asks_again_once():
    client = judge_client("looks right", '{"correctness": 1, "completeness": 1}')
    assert llm_judge("q", "g", "p", client)["correctness"] == 1
    with pytest.raises(ReplyParseError):
        llm_judge("q", "g", "p", judge_client("nope", '{"correctness": 2, "completeness": 1}'))


def test_judge_skipped_without_backend():
    assert llm_judge("q", "g", "p", None)["status"] == "skipped"
    assert llm_judge("q", "g", "p", LLMClient(ScriptedBackend(), cache=ResponseCache()))["status"] == "skipped"


def test_evaluate_exact_aggregates_and_skips():
    records = [EvalRecord("q1", "a", frozenset({"1"})), EvalRecord("q2", "b", frozenset({"2", "3"})),
               EvalRecord("q3", "c", frozenset({"missing"}))]
    ranked = {"q1": ["1", "2", "3"], "q2": ["3", "4", "5"], "q3": ["1"]}
    report = evaluate(records, ranked.__getitem__, ks=(1, 3), corpus_ids={"1", "2", "3", "4", "5"},
                      answerer=lambda q, docs: "a", clock=iter(range(100)).__next__)
    agg = report.aggregate
    assert len(report.skipped) == 1 and report.skipped[0]["missing_gold"] == ["missing"]
    assert agg["precision@1"] == 1.0
    assert agg["recall@3"] == float((Fraction(1) + Fraction(1, 2)) / 2)
    assert agg["precision@3"] == float(Fraction(1, 3))
    assert agg["f1"] == 0.5
    assert all(isinstance(q["hits@3"], int) for q in report.per_query)
    assert agg["latency_ms"]["mean"] == 1000.0
    json.dumps(report.to_dict())


def test_read_qa(tmp_path, casestudy_dir):
    assert len(read_qa(casestudy_dir / "qa.jsonl")) == 5
    p = tmp_path / "qa.jsonl"
    p.write_text("")
    with pytest.raises(DataError):
        read_qa(p)
