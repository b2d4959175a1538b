"""Acceptance gate: one test per criterion, each against an independent oracle.

Criteria 1-9 run fully offline on scripted mock transports. Criteria 10 and 11
hit a real judge endpoint and are skipped unless live credentials and benchmark
paths are provided via environment variables (see the docstrings below).
"""

from __future__ import annotations

import dataclasses
import json
import os
import random
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import (
    ANSWER,
    QUESTION,
    chat_ep,
    embed_ep,
    happy_rules,
    make_corpus,
    make_gateway,
)
from ragval.alignment import (
    LabeledExample,
    bonett_wright_se,
    load_squad2,
    load_stsb,
    spearman_rho,
    validate_metric_alignment,
)
from ragval.cli import main
from ragval.config import derive_seed
from ragval.gateway import CHAT, Gateway, MockRule, MockScript, ModelEndpoint
from ragval.index import build_index, query_top_k
from ragval.ingest import ChunkingConfig, Document, chunk_document, tokenize_builtin, write_chunk_manifest
from ragval.judges import UNIT_INTERVAL, PromptProgram, load_program, program_digest
from ragval.optimize import copro_optimize, labeled_few_shot, mipro_lite
from ragval.qagen import (
    FilterThresholds,
    GenerationConfig,
    generate_dataset,
    read_qa_dataset,
    sample_contexts,
)
from ragval.retrieval import RetrievalOutcome, mrr_at_k, recall_at_k


def test_criterion_01():
    """Recall@K and MRR@K match brute-force recomputation on 1,000 random rank sets."""
    started = time.monotonic()
    rng = random.Random(11)
    for _ in range(1000):
        n = rng.randint(1, 50)
        k = rng.randint(1, 10)
        ranks = [rng.choice([None] + list(range(1, n + 1))) for _ in range(n)]
        outcomes = [
            RetrievalOutcome(query_id=f"q{i}", truth_chunk_id="c", rank=r, k=max(k, r or 0))
            for i, r in enumerate(ranks)
        ]
        recall = recall_at_k(outcomes, k)
        mrr = mrr_at_k(outcomes, k)
        hits = sum(1 for r in ranks if r is not None and r <= k)
        reciprocal = sum(1.0 / r for r in ranks if r is not None and r <= k)
        assert recall == hits / n
        assert mrr == pytest.approx(reciprocal / n, abs=1e-12)
        assert mrr <= recall + 1e-12
    assert time.monotonic() - started < 5.0


def test_criterion_02():
    """Worked formula values: MRR over ranks {1,2,4} and Recall@10 over ranks {1,5,12}."""
    outcomes = [
        RetrievalOutcome(query_id=f"q{i}", truth_chunk_id="c", rank=r, k=12)
        for i, r in enumerate([1, 2, 4])
    ]
    assert mrr_at_k(outcomes, 10) == pytest.approx(7 / 12, abs=1e-12)

    outcomes = [
        RetrievalOutcome(query_id=f"q{i}", truth_chunk_id="c", rank=r, k=12)
        for i, r in enumerate([1, 5, 12])
    ]
    assert recall_at_k(outcomes, 10) == pytest.approx(2 / 3, abs=1e-12)


def test_criterion_03():
    """Bonett-Wright SE reproduces the published benchmark values at n=500."""
    se_optimized = bonett_wright_se(0.874, 500)
    assert 0.0525 <= se_optimized <= 0.0530
    assert round(se_optimized, 3) == 0.053
    assert round(bonett_wright_se(0.752, 500), 3) == 0.051


def _oracle_spearman(x: list[float], y: list[float]) -> float:
    def average_ranks(values: list[float]) -> list[float]:
        return [
            sum(1 for other in values if other < v) + (sum(1 for other in values if other == v) + 1) / 2
            for v in values
        ]

    return float(np.corrcoef(average_ranks(x), average_ranks(y))[0, 1])


def test_criterion_04():
    """Tie-aware Spearman agrees with an average-rank Pearson oracle on 1,000 tied vectors."""
    rng = random.Random(23)

    def tied_vector(n: int) -> list[float]:
        while True:
            values = [float(rng.randint(0, 4)) for _ in range(n)]
            if len(set(values)) > 1:
                return values

    for _ in range(1000):
        n = rng.randint(4, 30)
        x, y = tied_vector(n), tied_vector(n)
        assert spearman_rho(x, y) == pytest.approx(_oracle_spearman(x, y), abs=1e-9)

    for _ in range(100):
        n = rng.randint(4, 20)
        x, y = tied_vector(n), tied_vector(n)
        transformed = [v**3 + 5 * v for v in y]
        assert spearman_rho(x, transformed) == pytest.approx(spearman_rho(x, y), abs=1e-12)


def test_criterion_05(tmp_path):
    """Chunker invariants on 200 random documents: coverage, overlap, stride, determinism."""
    started = time.monotonic()
    rng = random.Random(31)
    cfg = ChunkingConfig(max_chunk_tokens=800, overlap_tokens=400)
    stride = 400
    all_chunks = []
    for d in range(200):
        n_tokens = rng.randint(50, 5000)
        text = " ".join(f"t{i}" for i in range(n_tokens))
        doc = Document(doc_id=f"d{d:03d}", source_path="x", text=text, token_count=n_tokens)
        chunks = chunk_document(doc, cfg)
        spans = [c.token_span for c in chunks]
        assert spans[0][0] == 0
        assert spans[-1][1] == n_tokens
        assert [s for s, _ in spans] == [i * stride for i in range(len(spans))]
        for (_, prev_end), (next_start, next_end) in zip(spans, spans[1:]):
            assert min(prev_end, next_end) - next_start == 400
        for chunk in chunks:
            start, end = chunk.char_span
            assert doc.text[start:end] == chunk.text
        # Every window except the last is full width; the last one ends the doc.
        for start, end in spans[:-1]:
            assert end - start == 800
        assert spans[-1][0] + 800 >= n_tokens
        all_chunks.extend(chunks)

    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_chunk_manifest(all_chunks, a)
    write_chunk_manifest(all_chunks, b)
    assert a.read_bytes() == b.read_bytes()
    assert time.monotonic() - started < 5.0


def test_criterion_06():
    """Vector index matches brute-force cosine ranking; ranks ignore positive scaling."""
    rng = np.random.default_rng(41)
    for trial in range(1000):
        n = int(rng.integers(1, 16))
        dim = int(rng.integers(2, 7))
        k = int(rng.integers(1, 11))
        vectors = rng.normal(size=(n, dim))
        for i in range(n):
            if np.linalg.norm(vectors[i]) < 1e-6:
                vectors[i] = np.ones(dim)
        ids = [f"c{i:02d}" for i in range(n)]
        query = rng.normal(size=dim)
        if np.linalg.norm(query) < 1e-6:
            query = np.ones(dim)

        index = build_index(ids, vectors)
        result = query_top_k(index, query, k)

        qn = query / np.linalg.norm(query)
        scored = sorted(
            ((float(v @ qn / np.linalg.norm(v)), cid) for cid, v in zip(ids, vectors)),
            key=lambda pair: (-pair[0], pair[1]),
        )[:k]
        assert [cid for cid, _ in result.ranked] == [cid for _, cid in scored]
        for (_, got), (want, _) in zip(result.ranked, scored):
            assert got == pytest.approx(want, abs=1e-9)

        if trial % 50 == 0:
            scales = rng.uniform(0.1, 100.0, size=n)
            scaled = build_index(ids, vectors * scales[:, None])
            rescaled = query_top_k(scaled, query * float(rng.uniform(0.1, 100.0)), k)
            assert [cid for cid, _ in rescaled.ranked] == [cid for cid, _ in result.ranked]


def _write_generation_setup(tmp_path: Path) -> tuple[Path, Path]:
    corpus_dir = tmp_path / "corpus"
    corpus_dir.mkdir()
    (corpus_dir / "cesium.txt").write_text(
        "Cesium is a soft alkali metal. It boils at 671 degrees Celsius.", encoding="utf-8"
    )
    (corpus_dir / "rubidium.txt").write_text(
        "Rubidium sits above cesium. It ignites spontaneously in air.", encoding="utf-8"
    )
    script_path = tmp_path / "script.json"
    script_path.write_text(
        json.dumps({"rules": [dataclasses.asdict(rule) for rule in happy_rules()]}),
        encoding="utf-8",
    )
    endpoint = {"model_name": "mock-model", "transport": "mock", "mock_script": str(script_path)}
    config = {
        "seed": 13,
        "cache_dir": str(tmp_path / "cache"),
        "corpus": {"paths": [str(corpus_dir)], "max_chunk_tokens": 64, "overlap_tokens": 16},
        "endpoints": {
            "embedder": dict(endpoint, model_name="mock-embedder"),
            "generator": dict(endpoint, model_name="mock-generator"),
            "judge": dict(endpoint, model_name="mock-judge"),
        },
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config), encoding="utf-8")
    return config_path, corpus_dir


def test_criterion_07(tmp_path):
    """Dataset generation is deterministic: cold and warm cache runs emit identical bytes."""
    config_path, _ = _write_generation_setup(tmp_path)
    out_cold, out_warm = tmp_path / "cold", tmp_path / "warm"

    for out_dir in (out_cold, out_warm):
        code = main(
            ["generate", "--config", str(config_path), "--output-dir", str(out_dir), "--n", "2"]
        )
        assert code == 0

    cold_bytes = (out_cold / "dataset.jsonl").read_bytes()
    assert cold_bytes == (out_warm / "dataset.jsonl").read_bytes()
    assert cold_bytes

    warm_stats = json.loads((out_warm / "qa_stats.json").read_text(encoding="utf-8"))
    assert warm_stats["meta"]["cache_stats"]["misses"] == 0
    assert warm_stats["meta"]["cache_stats"]["hits"] > 0

    payload = warm_stats["payload"]
    assert payload["accepted"] + sum(payload["rejected_by_metric"].values()) == payload["attempts"]

    thresholds = FilterThresholds()
    for record in read_qa_dataset(out_warm / "dataset.jsonl"):
        assert record.filter_scores["answerability"] >= thresholds.answerability_min
        assert record.filter_scores["faithfulness"] >= thresholds.faithfulness_min
        assert record.filter_scores["answer_relevance"] >= thresholds.relevance_min


def test_criterion_08():
    """Quality filtering drops every candidate from contexts the judge marks unfaithful."""
    marker = "flagged-zone"
    corpus = make_corpus(
        [
            "The calibration constant for the visible band is 0.82 under lab light.",
            f"{marker} The sensor saturates above 4000 kelvin in bench tests.",
            "The infrared detector operates at 77 kelvin using liquid nitrogen.",
            f"{marker} The prototype gyroscope drifts and its bias grows hourly.",
        ]
    )
    rules = [
        MockRule(match=["verdicts", marker], response="verdicts:\n1. unsupported")
    ] + happy_rules()
    script = MockScript(rules=rules)
    cfg = GenerationConfig(
        generator=chat_ep(script, "mock-generator"),
        judge=chat_ep(script, "mock-judge"),
        embedder=embed_ep(script, "mock-embedder"),
        thresholds=FilterThresholds(),
    )
    seed = 5
    records, stats = generate_dataset(make_gateway(), corpus, 2, cfg, seed)

    marked_ids = {c.chunk_id for c in corpus.chunks if marker in c.text}
    assert len(marked_ids) == 2
    assert all(r.chunk_id not in marked_ids for r in records)
    assert len(records) == 2

    # The rejection count must equal the scripted schedule: replay the same
    # sampling order and count marked contexts seen before the second clean one.
    budget = 2 * cfg.attempt_budget_factor
    order = sample_contexts(corpus, budget, derive_seed(seed, "qagen:sample"))
    expected_rejected = 0
    clean_seen = 0
    for position, chunk in enumerate(order, start=1):
        if chunk.chunk_id in marked_ids:
            expected_rejected += 1
        else:
            clean_seen += 1
        if clean_seen == 2:
            expected_attempts = position
            break
    assert stats.attempts == expected_attempts
    assert stats.rejected_by_metric["faithfulness"] == expected_rejected
    assert sum(stats.rejected_by_metric.values()) == expected_rejected


RATING_PROGRAM = PromptProgram(
    metric_name="answer_correctness",
    instruction="Rate the item. Write 'rating:' then a value between 0 and 1.",
    output_field="rating",
    scale=UNIT_INTERVAL,
    input_fields=("text",),
    name="rating-base",
)


def _rating_examples(start: int, stop: int) -> list[LabeledExample]:
    return [
        LabeledExample(inputs={"text": f"item-{i:02d}"}, gold=(i % 10) / 10)
        for i in range(start, stop)
    ]


def _echo_rules() -> list[MockRule]:
    return [
        MockRule(match=f"item-{i:02d}", response=f"rating: {(i % 10) / 10}") for i in range(20)
    ]


def test_criterion_09():
    """Optimizer contracts: k=8 demo selection, monotone best scores, rewrite rejection."""
    base = load_program("answerability")
    assert len(base.demos) == 0
    train = [
        LabeledExample(inputs={"question": f"q{i}", "context": f"c{i}"}, gold=float(i % 2))
        for i in range(10)
    ]
    tuned = labeled_few_shot(base, train, 8, seed=3)
    assert len(tuned.demos) == 8
    allowed = [{**e.inputs, base.output_field: e.gold} for e in train]
    assert all(dict(demo) in allowed for demo in tuned.demos)

    train_set = _rating_examples(0, 10)
    val_set = _rating_examples(10, 20)
    judge_rules = _echo_rules()
    gateway = make_gateway()

    keeps_marker = MockRule(match="instruction", response="Score the item; end with rating: value.")
    copro_script = MockScript(rules=[keeps_marker] + judge_rules)
    trace = copro_optimize(
        gateway,
        RATING_PROGRAM,
        train_set,
        val_set,
        judge=chat_ep(copro_script, "mock-judge"),
        proposer=chat_ep(copro_script, "mock-proposer"),
        breadth=2,
        depth=2,
        seed=7,
    )
    assert all(a <= b for a, b in zip(trace.best_history, trace.best_history[1:]))
    assert trace.best_history

    drops_marker = MockRule(match="instruction", response="Respond with a bare number only.")
    reject_script = MockScript(rules=[drops_marker] + judge_rules)
    rejected_trace = copro_optimize(
        make_gateway(),
        RATING_PROGRAM,
        train_set,
        val_set,
        judge=chat_ep(reject_script, "mock-judge"),
        proposer=chat_ep(reject_script, "mock-proposer"),
        breadth=2,
        depth=1,
        seed=7,
    )
    assert rejected_trace.rejected_rewrites == 2
    assert program_digest(rejected_trace.best_program) == program_digest(RATING_PROGRAM)
    assert all(a <= b for a, b in zip(rejected_trace.best_history, rejected_trace.best_history[1:]))

    mipro_script = MockScript(rules=[keeps_marker] + judge_rules)
    mipro_trace = mipro_lite(
        make_gateway(),
        RATING_PROGRAM,
        train_set,
        val_set,
        judge=chat_ep(mipro_script, "mock-judge"),
        proposer=chat_ep(mipro_script, "mock-proposer"),
        trials=3,
        seed=7,
    )
    assert all(a <= b for a, b in zip(mipro_trace.best_history, mipro_trace.best_history[1:]))


def _live_endpoint() -> ModelEndpoint | None:
    base_url = os.environ.get("RAGVAL_LIVE_BASE_URL")
    model = os.environ.get("RAGVAL_LIVE_JUDGE_MODEL")
    if not base_url or not model:
        return None
    return ModelEndpoint(
        model_name=model,
        kind=CHAT,
        base_url=base_url,
        api_key_env="RAGVAL_LIVE_API_KEY",
        transport="http",
    )


LIVE_HINT = (
    "live check: set RAGVAL_LIVE_BASE_URL, RAGVAL_LIVE_JUDGE_MODEL, RAGVAL_LIVE_API_KEY, "
    "and {benchmark} to run"
)


def test_criterion_10(tmp_path):
    """(Live) Optimized correctness judge reaches Spearman >= 0.80 on STS-B pairs."""
    endpoint = _live_endpoint()
    stsb_path = os.environ.get("RAGVAL_STSB_PATH")
    if endpoint is None or not stsb_path:
        pytest.skip(LIVE_HINT.format(benchmark="RAGVAL_STSB_PATH"))
    examples = load_stsb(stsb_path, n=200, seed=17)
    gateway = Gateway(cache_dir=tmp_path / "live-cache")
    report = validate_metric_alignment(
        gateway, load_program("answer_correctness"), examples, endpoint
    )
    assert report.valid
    assert report.n >= 200
    assert report.rho_s >= 0.80


def test_criterion_11(tmp_path):
    """(Live) Hand-crafted answerability judge reaches Spearman >= 0.55 on SQuAD 2.0."""
    endpoint = _live_endpoint()
    squad_path = os.environ.get("RAGVAL_SQUAD2_PATH")
    if endpoint is None or not squad_path:
        pytest.skip(LIVE_HINT.format(benchmark="RAGVAL_SQUAD2_PATH"))
    examples = load_squad2(squad_path, n=200, seed=17)
    gateway = Gateway(cache_dir=tmp_path / "live-cache")
    report = validate_metric_alignment(
        gateway, load_program("answerability"), examples, endpoint
    )
    assert report.valid
    assert report.n >= 200
    assert report.rho_s >= 0.55
