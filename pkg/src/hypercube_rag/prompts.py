"""Editable prompt templates with strict placeholder checking."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .errors import TemplateError

PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

REQUIRED_PLACEHOLDERS = {
    "decompose": {"dimensions", "question"},
    "answer": {"question", "documents"},
    "judge": {"question", "gold_answer", "predicted_answer"},
    "entities": {"document"},
    "summarize": {"entities"},
    "consolidate": {"candidates"},
}


def placeholders(text: str) -> set[str]:
    return set(PLACEHOLDER_RE.findall(text))


def render(text: str, variables: dict) -> str:
    """Substitute ``{name}`` tokens; any token without a value is an error."""
    missing = sorted(placeholders(text) - set(variables))
    if missing:
        raise TemplateError(f"template is missing variables: {', '.join(missing)}")
    return PLACEHOLDER_RE.sub(lambda m: str(variables[m.group(1)]), text)


def _required_for(template_id: str) -> set[str]:
    if template_id.startswith("extract."):
        return {"document"}
    return REQUIRED_PLACEHOLDERS.get(template_id, set())


@dataclass(frozen=True)
class PromptConfig:
    template_id: str
    text: str
    model: str | None = None
    temperature: float = 0.0

    def __post_init__(self):
        missing = sorted(_required_for(self.template_id) - placeholders(self.text))
        if missing:
            raise TemplateError(f"template {self.template_id!r} lacks placeholders: {', '.join(missing)}")

    def render(self, **variables) -> str:
        return render(self.text, variables)


class PromptSet:
    def __init__(self, configs: dict[str, PromptConfig]):
        self.configs = dict(configs)

    @classmethod
    def load(cls, path: str | Path | None = None) -> PromptSet:
        if path is None:
            raw = resources.files("hypercube_rag").joinpath("data/prompts.yaml").read_text(encoding="utf-8")
        else:
            raw = Path(path).read_text(encoding="utf-8")
        data = yaml.safe_load(raw) or {}
        temperature = float(data.get("temperature", 0.0))
        model = data.get("model")
        configs = {}
        for tid, entry in (data.get("templates") or {}).items():
            if isinstance(entry, str):
                entry = {"text": entry}
            configs[tid] = PromptConfig(
                tid,
                entry["text"],
                model=entry.get("model", model),
                temperature=float(entry.get("temperature", temperature)),
            )
        return cls(configs)

    def __getitem__(self, template_id: str) -> PromptConfig:
        try:
            return self.configs[template_id]
        except KeyError:
            raise TemplateError(f"no prompt template {template_id!r}") from None

    def __contains__(self, template_id: str) -> bool:
        return template_id in self.configs

    def extraction_prompt(self, dimension) -> PromptConfig:
        """Template for per-dimension extraction: an ``extract.<name>`` entry wins over the schema's own."""
        key = f"extract.{dimension.name}"
        if key in self.configs:
            return self.configs[key]
        return PromptConfig(key, dimension.prompt_template)
