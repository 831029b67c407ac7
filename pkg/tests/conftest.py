from __future__ import annotations

from pathlib import Path

import pytest

from hypercube_rag import Gazetteer, GazetteerExtractor, ToyEmbedder, load_schema
from hypercube_rag.builder import index_corpus, read_corpus
from hypercube_rag.config import AppConfig

CASESTUDY = Path(__file__).resolve().parents[1] / "src" / "hypercube_rag" / "data" / "casestudy"

# acceptance lines collected by test_acceptance.py, shown in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def casestudy_dir() -> Path:
    return CASESTUDY


@pytest.fixture(scope="session")
def casestudy_config() -> AppConfig:
    return AppConfig.load(CASESTUDY / "config.yaml")


@pytest.fixture(scope="session")
def casestudy_index():
    index, _ = index_corpus(
        read_corpus(CASESTUDY / "corpus.jsonl"),
        load_schema(CASESTUDY / "schema.json"),
        GazetteerExtractor(Gazetteer.load(CASESTUDY / "gazetteer.json")),
    )
    return index


@pytest.fixture(scope="session")
def toy():
    return ToyEmbedder()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
