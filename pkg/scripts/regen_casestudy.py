"""Regenerate data/casestudy/scripted.jsonl from the canned replies below.

Scripted replies are keyed by the hash of the rendered prompt, so this must
be rerun whenever a prompt template, the fixture corpus, or the schema changes.
"""

from __future__ import annotations

import json
from pathlib import Path

from hypercube_rag import GazetteerExtractor, Gazetteer, RetrievalConfig, ToyEmbedder, load_schema, search
from hypercube_rag.builder import index_corpus, read_corpus
from hypercube_rag.engine import format_documents
from hypercube_rag.llm import prompt_hash
from hypercube_rag.metrics import read_qa
from hypercube_rag.prompts import PromptSet
from hypercube_rag.retrieval import QueryComponent

HERE = Path(__file__).resolve().parents[1] / "src" / "hypercube_rag" / "data" / "casestudy"

# question index -> (decomposition, answer)
CANNED = [
    ([("location", "Melbourne Beach"), ("event", "Tropical Storm Fay"), ("theme", "rainfall")],
     "25.28 inches"),
    ([("location", "Atlantic"), ("event", "Atlantic hurricane season"),
      ("organization", "Climate Prediction Center"), ("theme", "likelihood")],
     "Above-normal: 85%, near-normal: 10%, below-normal: 5%"),
    ([("location", "Kennedy Space Center"), ("event", "Tropical Storm Fay"), ("theme", "beach erosion")],
     "A gap in the near-shore sandbar."),
    ([("location", "Gainesville"), ("location", "Florida"), ("theme", "precipitation"), ("theme", "drought")],
     "12.95 inches of precipitation"),
    ([("location", "Florida"), ("theme", "erosion")],
     "Doc 246 and Doc 535"),
]


def main() -> None:
    dims = load_schema(HERE / "schema.json")
    index, _ = index_corpus(read_corpus(HERE / "corpus.jsonl"), dims,
                            GazetteerExtractor(Gazetteer.load(HERE / "gazetteer.json")))
    prompts = PromptSet.load()
    config = RetrievalConfig(top_k=5, tau=0.5)
    embedder = ToyEmbedder()
    listing = "\n".join(f"- {d.name}: {d.description}" if d.description else f"- {d.name}" for d in dims)
    rows = []
    for record, (pairs, reply) in zip(read_qa(HERE / "qa.jsonl"), CANNED):
        decomposition = json.dumps([{"dimension": d, "content": c} for d, c in pairs])
        prompt = prompts["decompose"].render(dimensions=listing, question=record.question)
        rows.append({"prompt_hash": prompt_hash(prompt), "reply": decomposition,
                     "note": f"decompose: {record.question}"})
        comps = [QueryComponent(d, c) for d, c in pairs]
        result = search(record.question, index, config, embedder, components=comps)
        prompt = prompts["answer"].render(question=record.question,
                                          documents=format_documents(result.doc_ids, index))
        rows.append({"prompt_hash": prompt_hash(prompt), "reply": reply,
                     "note": f"answer from {result.doc_ids}"})
    with open(HERE / "scripted.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    print(f"wrote {len(rows)} replies to {HERE / 'scripted.jsonl'}")


if __name__ == "__main__":
    main()
