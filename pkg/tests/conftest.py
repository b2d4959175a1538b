"""Shared fixtures: tiny corpora, scripted mock endpoints, acceptance summary lines.

Every test runs offline. Chat and embedding traffic goes through MockScript
rules that key on template-unique substrings, so prompts route to the right
canned response no matter how the surrounding text varies.
"""

from __future__ import annotations

import re

import pytest

from ragval.gateway import (
    CHAT,
    EMBEDDING,
    Gateway,
    MockRule,
    MockScript,
    ModelEndpoint,
)
from ragval.ingest import (
    Chunk,
    ChunkingConfig,
    Corpus,
    Document,
    chunk_document,
    tokenize_builtin,
)

# Canned texts reused across pipeline mocks. They must not contain any of the
# template-unique needles the mock rules key on.
QUESTION = "What is the boiling point of cesium?"
ANSWER = "The boiling point of cesium is 671 degrees Celsius."


def make_corpus(texts: list[str], cfg: ChunkingConfig | None = None) -> Corpus:
    """Build an in-memory corpus with one document per text."""
    cfg = cfg or ChunkingConfig(max_chunk_tokens=64, overlap_tokens=16)
    documents = []
    chunks = []
    for i, text in enumerate(texts):
        doc = Document(
            doc_id=f"doc{i:02d}",
            source_path=f"doc{i:02d}.txt",
            text=text,
            token_count=len(tokenize_builtin(text)),
        )
        documents.append(doc)
        chunks.extend(chunk_document(doc, cfg))
    return Corpus(documents=documents, chunks=chunks, config=cfg)


def chat_ep(script: MockScript, name: str = "mock-chat") -> ModelEndpoint:
    return ModelEndpoint(model_name=name, kind=CHAT, transport="mock", mock_script=script)


def embed_ep(script: MockScript, name: str = "mock-embed") -> ModelEndpoint:
    return ModelEndpoint(model_name=name, kind=EMBEDDING, transport="mock", mock_script=script)


def make_gateway(cache_dir=None, **kwargs) -> Gateway:
    kwargs.setdefault("sleep", lambda seconds: None)
    return Gateway(cache_dir, **kwargs)


def happy_rules(question: str = QUESTION, answer: str = ANSWER) -> list[MockRule]:
    """Rules that accept every candidate and judge every answer perfect.

    The relevance path needs no embedding rules: the scripted question writer
    returns the original question three times, and identical texts hash to
    identical vectors, so every cosine is exactly 1.
    """
    return [
        MockRule(match="check_flag", response="check_flag: 1"),
        MockRule(match="answerability_flag", response="answerability_flag: 1"),
        MockRule(match="break the answer down", response="statements:\n1. Cesium boils at 671 degrees Celsius."),
        MockRule(match="verdicts", response="verdicts:\n1. supported"),
        MockRule(match="different questions", response=f"questions:\n1. {question}\n2. {question}\n3. {question}"),
        MockRule(match="Write exactly one question", response=question),
        MockRule(match="subject-matter expert", response=answer),
        MockRule(match="correctness_score", response="correctness_score: 1.0"),
        MockRule(match="Answer the question using only the provided context", response=answer),
        MockRule(match="failure_labels", response="failure_labels: none"),
    ]


def happy_script(**overrides) -> MockScript:
    return MockScript(rules=happy_rules(), **overrides)


@pytest.fixture
def gateway():
    return make_gateway()


@pytest.fixture
def tiny_corpus():
    return make_corpus(
        [
            "Cesium is a soft alkali metal. It boils at 671 degrees Celsius and melts near room temperature.",
            "Rubidium sits above cesium in the periodic table. It ignites spontaneously in air.",
            "Francium is the rarest alkali metal. Almost no bulk properties have been measured for it.",
        ]
    )


# --- acceptance summary -------------------------------------------------------
#
# Tests named test_criterion_NN in test_acceptance.py get one PASS/FAIL/SKIP
# line each in the terminal summary, so the gate can be read at a glance.

_CRITERION_RE = re.compile(r"test_criterion_(\d+)")
_acceptance_results: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if "test_acceptance.py" not in str(item.fspath):
        return
    match = _CRITERION_RE.search(item.name)
    if not match:
        return
    number = int(match.group(1))
    doc = (item.function.__doc__ or "").strip().splitlines()
    title = doc[0] if doc else item.name
    if report.when == "call":
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _acceptance_results[number] = (status, title)
    elif report.when == "setup" and (report.skipped or report.failed):
        status = "SKIP" if report.skipped else "FAIL"
        _acceptance_results[number] = (status, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance_results):
        status, title = _acceptance_results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")
