"""Application configuration and backend wiring.

A YAML file supplies defaults; relative paths inside it resolve against the
file's own directory. Command-line flags override individual values.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .embed import CachedEmbedder, HttpEmbedder, ToyEmbedder
from .errors import BackendError, UsageError
from .extraction import Gazetteer, GazetteerExtractor, LLMExtractor
from .llm import HttpChatBackend, LLMClient, ResponseCache, RetryPolicy, ScriptedBackend
from .prompts import PromptSet
from .retrieval import RetrievalConfig

BACKENDS = ("llm", "gazetteer", "scripted")


@dataclass
class LLMSettings:
    endpoint: str | None = None
    chat_model: str = "default"
    embed_model: str | None = None
    api_key_env: str = "HYPERCUBE_API_KEY"
    max_in_flight: int = 4
    timeout: float = 120.0
    max_attempts: int = 4
    base_delay: float = 0.5
    max_delay: float = 8.0
    cache_dir: Path | None = None

    @property
    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env) if self.api_key_env else None


@dataclass
class AppConfig:
    backend: str = "gazetteer"
    index: Path | None = None
    prompts: Path | None = None
    gazetteer: Path | None = None
    scripted: Path | None = None
    embedder: str = "toy"
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    llm: LLMSettings = field(default_factory=LLMSettings)
    k: int = 10
    seed: int = 42
    sample_size: int = 30
    max_failure_fraction: float = 0.05
    workers: int = 1

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise UsageError(f"unknown backend {self.backend!r}; expected one of {', '.join(BACKENDS)}")
        if self.embedder not in ("toy", "http"):
            raise UsageError(f"unknown embedder {self.embedder!r}; expected 'toy' or 'http'")

    @classmethod
    def load(cls, path: str | os.PathLike | None = None) -> AppConfig:
        if path is None:
            return cls()
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise UsageError(f"{path}: invalid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError(f"{path}: expected a mapping at the top level")
        return cls.from_dict(data, base=path.parent)

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> AppConfig:
        base = base or Path.cwd()
        data = dict(data)

        def as_path(value):
            if value is None:
                return None
            p = Path(os.path.expanduser(str(value)))
            return p if p.is_absolute() else (base / p)

        llm = dict(data.pop("llm", None) or {})
        retry = llm.pop("retry", None) or {}
        llm.update(retry)
        if "cache_dir" in llm:
            llm["cache_dir"] = as_path(llm["cache_dir"])
        retrieval = data.pop("retrieval", None) or {}
        if "disabled_dimensions" in retrieval:
            retrieval["disabled_dimensions"] = frozenset(retrieval["disabled_dimensions"])
        build = data.pop("build", None) or {}
        try:
            cfg = cls(
                llm=LLMSettings(**llm),
                retrieval=RetrievalConfig(**retrieval),
                **{k: as_path(v) if k in ("index", "prompts", "gazetteer", "scripted") else v
                   for k, v in data.items()},
                **build,
            )
        except TypeError as exc:
            raise UsageError(f"bad config key: {exc}") from exc
        return cfg

    def with_overrides(self, **changes) -> AppConfig:
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def check_paths(self) -> None:
        for name in ("prompts", "gazetteer", "scripted"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise UsageError(f"{name} file not found: {p}")

    # -- wiring --------------------------------------------------------------

    def prompt_set(self) -> PromptSet:
        return PromptSet.load(self.prompts)

    def chat_client(self) -> LLMClient | None:
        """Chat client for the active backend; ``None`` for the gazetteer backend."""
        if self.backend == "gazetteer":
            return None
        if self.backend == "scripted":
            if self.scripted is None:
                raise UsageError("the scripted backend needs a 'scripted' replies file")
            backend = ScriptedBackend.load(self.scripted)
        else:
            if not self.llm.endpoint:
                raise UsageError("the llm backend needs llm.endpoint in the config")
            backend = HttpChatBackend(self.llm.endpoint, self.llm.api_key, self.llm.timeout)
        return LLMClient(
            backend, self.prompt_set(), model=self.llm.chat_model,
            cache=ResponseCache(self.llm.cache_dir),
            retry=RetryPolicy(self.llm.max_attempts, self.llm.base_delay, self.llm.max_delay),
            max_in_flight=self.llm.max_in_flight,
        )

    def require_chat(self) -> LLMClient:
        client = self.chat_client()
        if client is None:
            raise BackendError("this command needs a chat backend; use --backend llm or --backend scripted")
        return client

    def extractor(self, client: LLMClient | None = None):
        """Gazetteer extraction when a gazetteer is configured (and the backend is not ``llm``)."""
        if self.backend != "llm" and self.gazetteer is not None:
            return GazetteerExtractor(Gazetteer.load(self.gazetteer))
        if self.backend == "gazetteer":
            raise UsageError("the gazetteer backend needs a 'gazetteer' file")
        return LLMExtractor(client or self.require_chat())

    def make_embedder(self):
        if self.embedder == "toy":
            return CachedEmbedder(ToyEmbedder())
        if not self.llm.endpoint or not self.llm.embed_model:
            raise UsageError("the http embedder needs llm.endpoint and llm.embed_model")
        return CachedEmbedder(HttpEmbedder(
            self.llm.endpoint, self.llm.embed_model, self.llm.api_key, self.llm.timeout,
            RetryPolicy(self.llm.max_attempts, self.llm.base_delay, self.llm.max_delay),
        ))
