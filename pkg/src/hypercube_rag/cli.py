"""Command-line entry point: ``hypercube-rag <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from pathlib import Path

from . import bench as benchmod
from .baselines import BM25, DenseScan
from .builder import BuildError, discover_dimensions, index_corpus, read_corpus
from .config import BACKENDS, AppConfig
from .cube import HypercubeIndex, load_schema
from .engine import answer as answer_query
from .engine import NO_SUPPORT, format_documents, search
from .errors import BackendError, DataError, HypercubeError, UsageError
from .metrics import evaluate, read_qa
from .ranking import format_table
from .retrieval import QueryComponent, RetrievalConfig, decompose_query, fallback_decompose

log = logging.getLogger("hypercube_rag")

TAU_SWEEP = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95)
BUILD_REPORT = "build_report.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(UsageError.exit_code, f"{self.prog}: error: {message}\n")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=False)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _need_file(path: str | None, what: str) -> Path:
    if not path:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


# -- shared option groups -----------------------------------------------------

def _retrieval_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("retrieval")
    g.add_argument("--index", help="index directory (default: config 'index')")
    g.add_argument("--top-k", type=int)
    g.add_argument("--tau", type=float)
    g.add_argument("--no-semantic", action="store_true", help="disable the embedding fallback")
    g.add_argument("--no-exact", action="store_true", help="disable exact label matching")
    g.add_argument("--no-ranking", action="store_true", help="return candidates in doc_id order")
    g.add_argument("--disable-dim", action="append", default=[], metavar="NAME",
                   help="ignore components on this dimension (repeatable)")


def _retrieval_config(cfg: AppConfig, args) -> RetrievalConfig:
    base = cfg.retrieval
    return RetrievalConfig(
        top_k=args.top_k if args.top_k is not None else base.top_k,
        tau=args.tau if args.tau is not None else base.tau,
        semantic_enabled=base.semantic_enabled and not args.no_semantic,
        exact_enabled=base.exact_enabled and not args.no_exact,
        disabled_dimensions=base.disabled_dimensions | frozenset(args.disable_dim),
        ranking_enabled=base.ranking_enabled and not args.no_ranking,
    )


def _load_index(cfg: AppConfig, args) -> HypercubeIndex:
    path = args.index or cfg.index
    if not path:
        raise UsageError("--index is required (or set 'index' in the config)")
    if not Path(path).is_dir():
        raise UsageError(f"index directory not found: {path}")
    return HypercubeIndex.load(path)


def _read_components(path: str) -> list[QueryComponent]:
    p = _need_file(path, "components file")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
        return [QueryComponent(d["dimension"], d["content"]) for d in data]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{p}: expected a JSON array of {{\"dimension\", \"content\"}}: {exc}") from exc


def _components(question: str, index: HypercubeIndex, client) -> list[QueryComponent]:
    if client is not None:
        return decompose_query(question, index, client)
    return fallback_decompose(question, index)


# -- commands -----------------------------------------------------------------

def cmd_build(cfg: AppConfig, args) -> int:
    corpus_path = _need_file(args.corpus, "--corpus")
    if bool(args.dimensions) == bool(args.discover):
        raise UsageError("give exactly one of --dimensions FILE and --discover")
    corpus = read_corpus(corpus_path)
    out = Path(args.out or cfg.index or "")
    if not str(out):
        raise UsageError("--out is required (or set 'index' in the config)")
    chat = cfg.chat_client()
    extractor = cfg.extractor(chat)
    discovery = None
    if args.dimensions:
        dimensions = load_schema(_need_file(args.dimensions, "--dimensions"))
    else:
        if chat is None:
            raise BackendError("dimension discovery needs a chat backend; use --backend llm or --backend scripted")
        k = args.k if args.k is not None else cfg.k
        workdir = out.with_name(out.name + ".work")
        discovery = discover_dimensions(corpus, extractor, cfg.make_embedder(), chat, k=k, seed=cfg.seed,
                                        sample_size=cfg.sample_size, workdir=workdir, workers=cfg.workers)
        dimensions = discovery.dimensions
    try:
        index, report = index_corpus(corpus, dimensions, extractor,
                                     max_failure_fraction=cfg.max_failure_fraction, workers=cfg.workers)
    except BuildError as exc:
        for doc_id, err in sorted(exc.failures.items()):
            print(f"failed {doc_id}: {err}", file=sys.stderr)
        raise
    if out.exists() and not out.is_dir():
        raise UsageError(f"--out exists and is not a directory: {out}")
    if out.is_dir():
        shutil.rmtree(out)
    index.save(out)
    body = report.to_dict()
    if discovery is not None:
        body["discovery"] = {"fell_back": discovery.fell_back,
                             "dimensions": [d.name for d in discovery.dimensions]}
    (out / BUILD_REPORT).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"indexed {report.docs_indexed} documents into {out}", file=sys.stderr)
    print(json.dumps(body, indent=2, sort_keys=True))
    return 0


def cmd_retrieve(cfg: AppConfig, args) -> int:
    index = _load_index(cfg, args)
    config = _retrieval_config(cfg, args)
    if args.components:
        comps = _read_components(args.components)
    elif args.query:
        comps = _components(args.query, index, cfg.chat_client())
    else:
        raise UsageError("give --query or --components")
    if not comps:
        raise DataError("no components")
    result = search(args.query, index, config, cfg.make_embedder() if config.semantic_enabled else None,
                    components=comps)
    if args.format == "table":
        _emit(format_table(result.explanations, index.dimension_names), args.out)
    else:
        _emit(_dump(result.to_dict()), args.out)
    return 0


def cmd_answer(cfg: AppConfig, args) -> int:
    index = _load_index(cfg, args)
    config = _retrieval_config(cfg, args)
    client = cfg.require_chat()
    comps = _read_components(args.components) if args.components else _components(args.query, index, client)
    result = answer_query(args.query, index, client, config,
                          cfg.make_embedder() if config.semantic_enabled else None, components=comps)
    _emit(_dump(result), args.out)
    return 0


def _retriever(method: str, cfg: AppConfig, index: HypercubeIndex, config: RetrievalConfig, client, embedder):
    if method == "hypercube":
        def run(question):
            comps = _components(question, index, client)
            if not comps:
                return []
            return search(question, index, config, embedder, components=comps).doc_ids
        return run
    if method == "bm25":
        bm25 = BM25({d: r.text for d, r in index.doc_store.items()})

        def run(question):
            return [d for d, _ in bm25.rank(question, k=config.top_k)]
        return run
    dense = DenseScan(index, embedder)

    def run(question):
        try:
            comps = _components(question, index, client)
        except DataError:
            comps = []
        texts = [c.content for c in comps] or [question]
        return [d for d, _ in dense.search(texts, config.top_k)]
    return run


def _eval_report(cfg: AppConfig, args, index: HypercubeIndex, config: RetrievalConfig, label: str):
    records = read_qa(_need_file(args.qa, "--qa"))
    client = cfg.chat_client()
    needs_embedder = config.semantic_enabled or args.method == "dense" or args.answers
    embedder = cfg.make_embedder() if needs_embedder else None
    retriever = _retriever(args.method, cfg, index, config, client, embedder)
    answerer = None
    if args.answers:
        chat = cfg.require_chat()

        def answerer(question, doc_ids):
            if not doc_ids:
                return NO_SUPPORT
            return chat.chat("answer", question=question, documents=format_documents(doc_ids, index)).strip()
    judge = cfg.require_chat() if args.judge else None
    return evaluate(records, retriever, ks=args.k, corpus_ids=index.doc_store.keys(), answerer=answerer,
                    embedder=embedder if args.answers else None, judge_client=judge, label=label)


def _report_label(method: str, config: RetrievalConfig) -> str:
    parts = [method]
    if method == "hypercube":
        parts.append(f"tau={config.tau:g}")
        if not config.semantic_enabled:
            parts.append("no-semantic")
        if not config.exact_enabled:
            parts.append("no-exact")
        if not config.ranking_enabled:
            parts.append("no-ranking")
        parts.extend(f"-{d}" for d in sorted(config.disabled_dimensions))
    return " ".join(parts)


def cmd_eval(cfg: AppConfig, args) -> int:
    index = _load_index(cfg, args)
    config = _retrieval_config(cfg, args)
    report = _eval_report(cfg, args, index, config, _report_label(args.method, config))
    if report.skipped:
        print(f"skipped {len(report.skipped)} record(s) with gold documents outside the corpus", file=sys.stderr)
    if args.format == "table":
        _emit(report.summary_table(), args.out)
    else:
        _emit(_dump(report.to_dict()), args.out)
    return 0


def cmd_sweep_tau(cfg: AppConfig, args) -> int:
    index = _load_index(cfg, args)
    args.method = "hypercube"
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = _retrieval_config(cfg, args)
    rows = []
    for tau in args.taus:
        config = RetrievalConfig(base.top_k, tau, base.semantic_enabled, base.exact_enabled,
                                 base.disabled_dimensions, base.ranking_enabled)
        report = _eval_report(cfg, args, index, config, _report_label("hypercube", config))
        (out_dir / f"report_tau{tau:g}.json").write_text(_dump(report.to_dict()) + "\n", encoding="utf-8")
        agg = report.aggregate
        rows.append({"tau": tau, **{k: v for k, v in agg.items() if isinstance(v, float)}})
        print(report.summary_table(), file=sys.stderr)
    fields = list(dict.fromkeys(k for r in rows for k in r))
    with open(out_dir / "sweep_tau.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    print(_dump(rows))
    return 0


def cmd_bench(cfg: AppConfig, args) -> int:
    rows = benchmod.latency_bench(cfg.make_embedder(), args.sizes, n_queries=args.queries,
                                  repetitions=args.repetitions, noise_fraction=args.noise,
                                  config=RetrievalConfig(top_k=cfg.retrieval.top_k, tau=cfg.retrieval.tau),
                                  seed=cfg.seed)
    if args.csv:
        benchmod.write_csv(rows, args.csv)
    print(benchmod.format_table(rows), file=sys.stderr)
    print(_dump([r.to_dict() for r in rows]))
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hypercube-rag", description="Multi-dimensional label index for retrieval.")
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--backend", choices=BACKENDS, help="model backend (overrides the config)")
    parser.add_argument("--seed", type=int, help="seed for clustering and benchmark sampling (default 42)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", help="index a corpus")
    p.add_argument("--corpus", required=True, help="corpus.jsonl with doc_id and text per line")
    p.add_argument("--dimensions", help="schema.json with predefined dimensions")
    p.add_argument("--discover", action="store_true", help="discover dimensions from the corpus")
    p.add_argument("--k", type=int, help="clusters for discovery (default 10)")
    p.add_argument("--out", help="index directory to write")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("retrieve", aliases=["query"], help="retrieve and rank documents for a query")
    p.add_argument("--query")
    p.add_argument("--components", help="JSON file of [{dimension, content}] instead of decomposing --query")
    _retrieval_flags(p)
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("answer", help="answer a question from retrieved documents")
    p.add_argument("--query", required=True)
    p.add_argument("--components")
    _retrieval_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_answer)

    for name, func, helptext in (("eval", cmd_eval, "score retrieval against a QA set"),
                                 ("sweep-tau", cmd_sweep_tau, "evaluate across similarity thresholds")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--qa", required=True, help="qa.jsonl with question, answer and gold_doc_ids")
        p.add_argument("--k", type=int, action="append", help="cutoffs for precision/recall (default 3 and 5)")
        p.add_argument("--answers", action="store_true", help="also generate answers and score F1/semantic")
        p.add_argument("--judge", action="store_true", help="also grade answers with the judge prompt")
        _retrieval_flags(p)
        if name == "eval":
            p.add_argument("--method", choices=("hypercube", "bm25", "dense"), default="hypercube")
            p.add_argument("--format", choices=("json", "table"), default="json")
            p.add_argument("--out")
        else:
            p.add_argument("--taus", type=float, nargs="+", default=list(TAU_SWEEP))
            p.add_argument("--out-dir", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("bench", help="latency benchmark on synthetic corpora")
    p.add_argument("--sizes", type=int, nargs="+", default=list(benchmod.DEFAULT_SIZES))
    p.add_argument("--queries", type=int, default=50)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.9, help="fraction of label-free documents")
    p.add_argument("--csv", help="write (method, corpus_size, median_ms) here")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = AppConfig.load(args.config).with_overrides(backend=args.backend, seed=args.seed)
        cfg.check_paths()
        if getattr(args, "k", None) is not None and args.command in ("eval", "sweep-tau"):
            args.k = sorted(set(args.k))
        elif args.command in ("eval", "sweep-tau"):
            args.k = [3, 5]
        return args.func(cfg, args)
    except HypercubeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
