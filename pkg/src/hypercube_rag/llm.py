"""Chat-completion access: HTTP and scripted backends, retries, and a response cache.

Backends implement ``complete(prompt, model, temperature) -> str``. The
:class:`LLMClient` wraps one with template rendering, a content-addressed
cache keyed by ``(model, temperature, rendered prompt)``, exponential-backoff
retries and a bound on concurrent requests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
import urllib.error
import urllib.request
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

from .errors import BackendError, DataError, UnscriptedPromptError
from .prompts import PromptSet

log = logging.getLogger(__name__)


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def cache_key(model: str, prompt: str, temperature: float = 0.0) -> str:
    ident = json.dumps({"model": model, "prompt": prompt, "temperature": temperature},
                       sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(ident.encode("utf-8")).hexdigest()


@dataclass
class RetryPolicy:
    max_attempts: int = 4
    base_delay: float = 0.5
    max_delay: float = 8.0
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    def call(self, fn):
        attempt = 0
        while True:
            attempt += 1
            try:
                return fn()
            except BackendError as exc:
                if not exc.retryable or attempt >= self.max_attempts:
                    raise
                delay = min(self.max_delay, self.base_delay * 2 ** (attempt - 1))
                log.warning("backend call failed (%s); retry %d/%d in %.1fs",
                            exc, attempt, self.max_attempts - 1, delay)
                self.sleep(delay)


def post_json(url: str, payload: dict, api_key: str | None, timeout: float) -> dict:
    body = json.dumps(payload).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    req = urllib.request.Request(url, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        retryable = exc.code == 429 or exc.code >= 500
        raise BackendError(f"HTTP {exc.code} from {url}", retryable=retryable) from exc
    except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
        raise BackendError(f"cannot reach {url}: {exc}", retryable=True) from exc
    except json.JSONDecodeError as exc:
        raise BackendError(f"non-JSON reply from {url}") from exc


class HttpChatBackend:
    """OpenAI-compatible ``POST {endpoint}/chat/completions``."""

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout

    def complete(self, prompt: str, model: str, temperature: float = 0.0) -> str:
        payload = {
            "model": model,
            "temperature": temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        data = post_json(f"{self.endpoint}/chat/completions", payload, self.api_key, self.timeout)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat reply: {json.dumps(data)[:200]}") from exc


class ScriptedBackend:
    """Canned replies keyed by the SHA-256 of the rendered prompt.

    Read-only after construction; ``calls`` counts every ``complete`` call.
    """

    def __init__(self, replies: dict[str, str] | None = None):
        self.replies = dict(replies or {})
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_pairs(cls, pairs) -> ScriptedBackend:
        return cls({prompt_hash(prompt): reply for prompt, reply in pairs})

    @classmethod
    def load(cls, path: str | Path) -> ScriptedBackend:
        replies = {}
        try:
            fh = open(path, encoding="utf-8")
        except FileNotFoundError:
            raise DataError(f"script file not found: {path}") from None
        with fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    replies[row["prompt_hash"]] = row["reply"]
                except (json.JSONDecodeError, KeyError) as exc:
                    raise DataError(f"{path}:{lineno}: bad script line: {exc}") from exc
        return cls(replies)

    def dump(self, path: str | Path, prompts: dict[str, str] | None = None) -> None:
        """Write the script as JSONL; ``prompts`` (hash -> text) is stored for readability only."""
        with open(path, "w", encoding="utf-8") as fh:
            for key in sorted(self.replies):
                row = {"prompt_hash": key, "reply": self.replies[key]}
                if prompts and key in prompts:
                    row["prompt"] = prompts[key]
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")

    def complete(self, prompt: str, model: str = "", temperature: float = 0.0) -> str:
        with self._lock:
            self.calls += 1
        key = prompt_hash(prompt)
        try:
            return self.replies[key]
        except KeyError:
            raise UnscriptedPromptError(key) from None


class UnavailableBackend:
    """Stands in when no chat backend is configured."""

    def complete(self, prompt: str, model: str = "", temperature: float = 0.0) -> str:
        raise BackendError("no chat backend configured")


class ResponseCache:
    """Content-addressed reply store; in memory when ``directory`` is None.

    Files are written to a temp file and renamed, so a reader never sees a
    partial entry.
    """

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        self._memory: dict[str, str] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    def get(self, key: str) -> str | None:
        value = None
        if self.directory is None:
            value = self._memory.get(key)
        else:
            try:
                value = json.loads(self._path(key).read_text(encoding="utf-8"))["reply"]
            except (FileNotFoundError, json.JSONDecodeError, KeyError):
                value = None
        with self._lock:
            if value is None:
                self.misses += 1
            else:
                self.hits += 1
        return value

    def put(self, key: str, reply: str, **meta) -> None:
        if self.directory is None:
            with self._lock:
                self._memory[key] = reply
            return
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump({"reply": reply, **meta}, fh, ensure_ascii=False, sort_keys=True)
        os.replace(tmp, path)


class LLMClient:
    def __init__(self, backend, prompts: PromptSet | None = None, *, model: str = "default",
                 cache: ResponseCache | None = None, retry: RetryPolicy | None = None,
                 max_in_flight: int = 4):
        self.backend = backend
        self.prompts = prompts or PromptSet.load()
        self.model = model
        self.cache = cache if cache is not None else ResponseCache()
        self.retry = retry or RetryPolicy()
        self.max_in_flight = max_in_flight
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def complete(self, prompt: str, *, model: str | None = None, temperature: float = 0.0,
                 use_cache: bool = True) -> str:
        model = model or self.model
        key = cache_key(model, prompt, temperature)
        if use_cache:
            cached = self.cache.get(key)
            if cached is not None:
                return cached

        def attempt():
            with self._slots:
                return self.backend.complete(prompt, model, temperature)

        reply = self.retry.call(attempt)
        if use_cache:
            self.cache.put(key, reply, model=model, prompt_hash=prompt_hash(prompt))
        return reply

    def render(self, template_id: str, **variables) -> str:
        return self.prompts[template_id].render(**variables)

    def chat(self, template_id: str, **variables) -> str:
        config = self.prompts[template_id]
        prompt = config.render(**variables)
        return self.complete(prompt, model=config.model, temperature=config.temperature)


def parse_json_reply(raw: str):
    """Parse a JSON reply, tolerating a surrounding Markdown code fence."""
    text = raw.strip()
    if text.startswith("```"):
        text = text.split("\n", 1)[1] if "\n" in text else ""
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return json.loads(text)
