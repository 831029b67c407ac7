"""Retrieval and answer-quality metrics, the LLM judge, and the evaluation loop.

Semantic score here is ``(1 + cos) / 2`` over answer embeddings. It is this
package's own definition and will not match numbers produced elsewhere.
"""

from __future__ import annotations

import json
import logging
import math
import time
from collections import Counter
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .baselines import text_tokens
from .errors import BackendError, DataError, ReplyParseError

log = logging.getLogger(__name__)

SEMANTIC_SCORE_NOTE = "semantic score = (1 + cosine(answer embeddings)) / 2 under the configured embedder"

JUDGE_REASK = (
    "\n\nYour previous reply could not be parsed. Reply again with exactly one JSON object "
    'of the form {"correctness": 0 or 1, "completeness": 0 or 1, "explanation": "..."} and nothing else.'
)


def _hits(retrieved: Sequence[str], gold: Iterable[str], k: int) -> int:
    if k <= 0:
        raise DataError(f"k must be positive, got {k}")
    gold = set(gold)
    top = list(dict.fromkeys(retrieved))[:k]
    return sum(1 for d in top if d in gold)


def precision_at_k(retrieved: Sequence[str], gold: Iterable[str], k: int) -> float:
    return _hits(retrieved, gold, k) / k


def recall_at_k(retrieved: Sequence[str], gold: Iterable[str], k: int, *, empty_gold: str = "one") -> float:
    """Fraction of gold documents in the top ``k``.

    With no gold documents the result is 1.0 (``empty_gold="one"``) or a
    ``DataError`` (``empty_gold="error"``).
    """
    gold = set(gold)
    hits = _hits(retrieved, gold, k)
    if not gold:
        if empty_gold == "error":
            raise DataError("recall is undefined for an empty gold set")
        return 1.0
    return hits / len(gold)


def token_f1_exact(pred: str, gold: str) -> Fraction:
    p, g = text_tokens(pred), text_tokens(gold)
    if not p and not g:
        return Fraction(1)
    if not p or not g:
        return Fraction(0)
    overlap = sum((Counter(p) & Counter(g)).values())
    # 2PR/(P+R) with P=o/|p|, R=o/|g| reduces to 2o/(|p|+|g|)
    return Fraction(2 * overlap, len(p) + len(g))


def token_f1(pred: str, gold: str) -> float:
    """Multiset token F1; two empty strings score 1, one empty string scores 0."""
    return float(token_f1_exact(pred, gold))


def semantic_score(pred: str, gold: str, embedder) -> float:
    a, b = np.asarray(embedder.embed([pred, gold]), dtype=np.float64)
    cos = float(np.dot(a, b) / ((np.linalg.norm(a) * np.linalg.norm(b)) or 1.0))
    return min(1.0, max(0.0, (1.0 + round(cos, 12)) / 2.0))


def _parse_judgement(raw: str) -> dict:
    from .llm import parse_json_reply

    try:
        data = parse_json_reply(raw)
    except json.JSONDecodeError:
        raise ReplyParseError("judge reply is not JSON", raw) from None
    if not isinstance(data, dict):
        raise ReplyParseError("judge reply must be a JSON object", raw)
    out = {}
    for key in ("correctness", "completeness"):
        value = data.get(key)
        if isinstance(value, bool) or value not in (0, 1):
            raise ReplyParseError(f"judge field {key!r} must be 0 or 1", raw)
        out[key] = int(value)
    out["explanation"] = str(data.get("explanation", ""))
    return out


def llm_judge(question: str, gold: str, pred: str, client) -> dict:
    """Grade ``pred`` against ``gold``; one re-ask on a malformed reply.

    Returns ``{"status": "ok", "correctness", "completeness", "explanation"}``
    or ``{"status": "skipped", "reason"}`` when no backend can be reached.
    """
    if client is None:
        return {"status": "skipped", "reason": "no chat backend configured"}
    try:
        prompt = client.render("judge", question=question, gold_answer=gold, predicted_answer=pred)
        raw = client.complete(prompt)
        try:
            result = _parse_judgement(raw)
        except ReplyParseError:
            log.warning("judge reply malformed; asking once more")
            result = _parse_judgement(client.complete(prompt + JUDGE_REASK))
    except ReplyParseError:
        raise
    except BackendError as exc:
        return {"status": "skipped", "reason": str(exc)}
    return {"status": "ok", **result}


# -- evaluation ---------------------------------------------------------------

@dataclass(frozen=True)
class EvalRecord:
    question: str
    gold_answer: str
    gold_doc_ids: frozenset[str]


def read_qa(path: str | Path) -> list[EvalRecord]:
    """Load ``qa.jsonl``: ``{"question", "answer", "gold_doc_ids"}`` per line."""
    records = []
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"QA file not found: {path}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                records.append(EvalRecord(row["question"], row.get("answer", ""),
                                          frozenset(str(d) for d in row.get("gold_doc_ids", []))))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad QA record: {exc}") from exc
    if not records:
        raise DataError(f"{path}: no QA records")
    return records


def _percentile(values: Sequence[float], q: float) -> float:
    return float(np.percentile(values, q)) if values else math.nan


@dataclass
class MetricReport:
    ks: tuple[int, ...]
    per_query: list[dict] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    label: str = ""
    # exact rational per-query values, parallel to per_query
    exact: list[dict] = field(default_factory=list, repr=False)

    def _mean(self, key: str) -> float | None:
        vals = []
        for i, q in enumerate(self.per_query):
            if q.get(key) is None:
                continue
            exact = self.exact[i] if i < len(self.exact) else {}
            vals.append(exact.get(key, Fraction(q[key])))
        if not vals:
            return None
        return float(sum(vals, Fraction(0)) / len(vals))

    @property
    def aggregate(self) -> dict:
        agg = {}
        for k in self.ks:
            agg[f"precision@{k}"] = self._mean(f"precision@{k}")
            agg[f"recall@{k}"] = self._mean(f"recall@{k}")
        for key in ("f1", "semantic", "correctness", "completeness"):
            value = self._mean(key)
            if value is not None:
                agg[key] = value
        lat = [q["latency_ms"] for q in self.per_query]
        agg["latency_ms"] = {"mean": float(np.mean(lat)) if lat else math.nan,
                             "p50": _percentile(lat, 50), "p95": _percentile(lat, 95)}
        return agg

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "note": SEMANTIC_SCORE_NOTE,
            "n_queries": len(self.per_query),
            "n_skipped": len(self.skipped),
            "aggregate": self.aggregate,
            "per_query": self.per_query,
            "skipped": self.skipped,
        }

    def summary_table(self) -> str:
        agg = self.aggregate
        rows = [(key, f"{value:.4f}") for key, value in agg.items() if isinstance(value, float)]
        lat = agg["latency_ms"]
        rows.append(("latency_ms mean/p50/p95", f"{lat['mean']:.3f} / {lat['p50']:.3f} / {lat['p95']:.3f}"))
        rows.append(("queries (skipped)", f"{len(self.per_query)} ({len(self.skipped)})"))
        width = max(len(r[0]) for r in rows)
        head = f"{self.label}\n" if self.label else ""
        return head + "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows)


def evaluate(records: Sequence[EvalRecord], retriever: Callable[[str], Sequence[str]], *,
             ks: Sequence[int] = (3, 5), corpus_ids: Iterable[str] | None = None,
             answerer: Callable[[str, Sequence[str]], str] | None = None, embedder=None,
             judge_client=None, label: str = "",
             clock: Callable[[], float] = time.perf_counter) -> MetricReport:
    """Run every record through ``retriever`` and score the ranked doc ids.

    Records citing gold documents missing from ``corpus_ids`` are skipped
    with a warning. ``answerer`` adds token F1 and semantic score, and
    ``judge_client`` adds judge correctness and completeness.
    """
    if not records:
        raise DataError("no QA records to evaluate")
    known = set(corpus_ids) if corpus_ids is not None else None
    report = MetricReport(tuple(sorted(set(ks))), label=label)
    for n, rec in enumerate(records):
        if known is not None and not rec.gold_doc_ids <= known:
            missing = sorted(rec.gold_doc_ids - known)
            log.warning("record %d: gold documents %s are not in the corpus; skipped", n, missing)
            report.skipped.append({"record": n, "question": rec.question, "missing_gold": missing})
            continue
        start = clock()
        try:
            ranked = list(retriever(rec.question))
        except DataError as exc:
            log.warning("record %d: retrieval failed (%s); scored as empty", n, exc)
            ranked = []
        elapsed_ms = (clock() - start) * 1000.0
        row = {"record": n, "question": rec.question, "retrieved": ranked,
               "gold_doc_ids": sorted(rec.gold_doc_ids), "latency_ms": elapsed_ms,
               "empty_gold": not rec.gold_doc_ids}
        exact = {}
        for k in report.ks:
            hits = _hits(ranked, rec.gold_doc_ids, k)
            row[f"hits@{k}"] = hits
            row[f"precision@{k}"] = precision_at_k(ranked, rec.gold_doc_ids, k)
            row[f"recall@{k}"] = recall_at_k(ranked, rec.gold_doc_ids, k)
            exact[f"precision@{k}"] = Fraction(hits, k)
            exact[f"recall@{k}"] = Fraction(hits, len(rec.gold_doc_ids)) if rec.gold_doc_ids else Fraction(1)
        if answerer is not None:
            pred = answerer(rec.question, ranked)
            row["prediction"] = pred
            exact["f1"] = token_f1_exact(pred, rec.gold_answer)
            row["f1"] = float(exact["f1"])
            if embedder is not None:
                row["semantic"] = semantic_score(pred, rec.gold_answer, embedder)
            if judge_client is not None:
                verdict = llm_judge(rec.question, rec.gold_answer, pred, judge_client)
                row["judge"] = verdict
                if verdict["status"] == "ok":
                    row["correctness"] = verdict["correctness"]
                    row["completeness"] = verdict["completeness"]
        report.per_query.append(row)
        report.exact.append(exact)
    return report
