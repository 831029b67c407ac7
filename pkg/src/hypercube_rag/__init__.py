"""Multi-dimensional label index for retrieval-augmented generation."""

from .baselines import BM25, DenseScan, bm25_rank
from .builder import (
    build_entity_pool,
    cluster_entities,
    consolidate_dimensions,
    discover_dimensions,
    index_corpus,
    read_corpus,
    summarize_clusters,
)
from .cube import CubeCellRef, DimensionSchema, DocumentRecord, HypercubeIndex, load_schema, normalize_label
from .embed import CachedEmbedder, ToyEmbedder, cosine
from .engine import answer, search
from .errors import BackendError, DataError, HypercubeError, UsageError
from .extraction import Gazetteer, GazetteerExtractor, LLMExtractor, extract_entities, gazetteer_extract
from .llm import LLMClient, ResponseCache, ScriptedBackend
from .metrics import evaluate, llm_judge, precision_at_k, recall_at_k, semantic_score, token_f1
from .ranking import RankedList, explain, rank
from .retrieval import (
    MatchResult,
    QueryComponent,
    RetrievalConfig,
    decompose_query,
    exact_score,
    fallback_decompose,
    retrieve,
    semantic_match,
)

__version__ = "0.1.0"
