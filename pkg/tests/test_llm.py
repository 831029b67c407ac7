from __future__ import annotations

import random
import string

import numpy as np
import pytest

from hypercube_rag import CachedEmbedder, ToyEmbedder, cosine
from hypercube_rag.errors import BackendError, TemplateError, UnscriptedPromptError
from hypercube_rag.llm import LLMClient, ResponseCache, RetryPolicy, ScriptedBackend, parse_json_reply, prompt_hash
from hypercube_rag.prompts import PromptConfig, PromptSet, render

from oracles import COS_RAINFALL_RAIN


def test_render_requires_every_variable():
    assert render("{a} and {b}", {"a": 1, "b": 2}) == "1 and 2"
    with pytest.raises(TemplateError, match="b"):
        render("{a} and {b}", {"a": 1})


def test_templates_declare_required_placeholders():
    with pytest.raises(TemplateError):
        PromptConfig("answer", "no placeholders here")
    prompts = PromptSet.load()
    for tid in ("decompose", "answer", "judge", "entities", "summarize", "consolidate"):
        assert tid in prompts
    with pytest.raises(TemplateError):
        prompts["nope"]


def test_cache_makes_backend_called_once(tmp_path):
    backend = ScriptedBackend.from_pairs([("hello", "world")])
    client = LLMClient(backend, cache=ResponseCache(tmp_path))
    assert client.complete("hello") == "world"
    assert client.complete("hello") == "world"
    assert backend.calls == 1
    # a fresh client over the same directory is served from disk
    other = LLMClient(ScriptedBackend(), cache=ResponseCache(tmp_path))
    assert other.complete("hello") == "world" and other.backend.calls == 0


def test_cache_is_transparent():
    pairs = [(f"p{i}", f"r{i}") for i in range(20)]
    cached = LLMClient(ScriptedBackend.from_pairs(pairs), cache=ResponseCache())
    for _ in range(2):
        for p, r in pairs:
            assert cached.complete(p) == r
            assert cached.complete(p, use_cache=False) == r


def test_unscripted_prompt_names_hash():
    with pytest.raises(UnscriptedPromptError) as info:
        ScriptedBackend().complete("what?")
    assert info.value.prompt_hash == prompt_hash("what?")


def test_script_round_trip(tmp_path):
    backend = ScriptedBackend.from_pairs([("a", "1"), ("b", "2")])
    backend.dump(tmp_path / "s.jsonl")
    assert ScriptedBackend.load(tmp_path / "s.jsonl").replies == backend.replies


class Flaky:
    def __init__(self, failures, retryable=True):
        self.failures = failures
        self.retryable = retryable
        self.calls = 0

    def complete(self, prompt, model, temperature=0.0):
        self.calls += 1
        if self.calls <= self.failures:
            raise BackendError("rate limited", retryable=self.retryable)
        return "ok"


def test_retry_with_exponential_backoff():
    delays = []
    policy = RetryPolicy(max_attempts=4, base_delay=0.5, max_delay=1.5, sleep=delays.append)
    client = LLMClient(Flaky(3), cache=ResponseCache(), retry=policy)
    assert client.complete("x") == "ok"
    assert delays == [0.5, 1.0, 1.5]


def test_retry_gives_up():
    policy = RetryPolicy(max_attempts=2, sleep=lambda _: None)
    backend = Flaky(5)
    with pytest.raises(BackendError):
        LLMClient(backend, cache=ResponseCache(), retry=policy).complete("x")
    assert backend.calls == 2


def test_non_retryable_fails_immediately():
    backend = Flaky(1, retryable=False)
    with pytest.raises(BackendError):
        LLMClient(backend, cache=ResponseCache(), retry=RetryPolicy(sleep=lambda _: None)).complete("x")
    assert backend.calls == 1


def test_parse_json_reply_strips_fence():
    assert parse_json_reply('```json\n["a"]\n```') == ["a"]
    assert parse_json_reply(' {"x": 1} ') == {"x": 1}


# -- embedders ------------------------------------------------------------------

def test_toy_embedder_unit_norm_on_random_strings():
    rng = random.Random(0)
    alphabet = string.ascii_letters + string.digits + " .,-éü"
    texts = ["".join(rng.choices(alphabet, k=rng.randint(0, 30))) for _ in range(1000)]
    vecs = ToyEmbedder().embed(texts)
    assert vecs.shape == (1000, 256)
    np.testing.assert_allclose(np.linalg.norm(vecs, axis=1), 1.0)


def test_frozen_cosine():
    toy = ToyEmbedder()
    a, b = toy.embed(["rainfall", "rain"])
    assert float(a @ b) == pytest.approx(COS_RAINFALL_RAIN, abs=1e-12)
    assert COS_RAINFALL_RAIN == pytest.approx(3 / 32 ** 0.5, abs=1e-15)


def test_cosine_symmetric_and_case_insensitive():
    toy = ToyEmbedder()
    a, b = toy.embed(["Tropical Storm Fay", "storm fay"])
    assert cosine(a, b) == pytest.approx(cosine(b, a))
    np.testing.assert_array_equal(toy.embed(["RAIN"]), toy.embed(["rain"]))
    assert cosine([0, 0], [1, 0]) == 0.0


def test_cached_embedder_matches_inner():
    inner = ToyEmbedder()
    cached = CachedEmbedder(inner)
    texts = ["rain", "drought", "rain"]
    np.testing.assert_array_equal(cached.embed(texts), inner.embed(texts))
    np.testing.assert_array_equal(cached.embed(texts), inner.embed(texts))


def test_embed_rejects_bad_input():
    with pytest.raises(TypeError):
        ToyEmbedder().embed("rain")
    with pytest.raises(ValueError):
        ToyEmbedder().embed([])
