"""End-to-end RAG evaluation: answer with retrieval, judge, sweep, and failure analysis."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import derive_seed
from .errors import CorpusError, TransportError
from .gateway import ChatRequest, Gateway, ModelEndpoint
from .index import VectorIndex, build_index, query_top_k
from .ingest import Corpus
from .judges import (
    load_template,
    score_answer_correctness,
    score_answer_relevance,
    score_faithfulness,
)
from .qagen import QARecord
from .retrieval import RetrievalOutcome, RetrievalResult, mrr_at_k, rank_of_truth, recall_at_k

log = logging.getLogger(__name__)

FAILURE_CATEGORIES = (
    "Over-Specificity",
    "Not Extracted",
    "Under-Specificity",
    "Missed Top Ranked",
    "Wrong Format",
    "Context Inconsistency",
    "Factual Fabrication",
    "Factual Contradiction",
    "Logical Inconsistency",
    "Instruction Inconsistency",
)
NO_FAILURES = "No Failures"


@dataclass
class RagConfig:
    """Endpoints and knobs for answering and judging one evaluation run."""

    embedder: ModelEndpoint
    generator: ModelEndpoint
    judge: ModelEndpoint
    k_retrieve: int = 10
    temperature: float = 0.0
    relevance_n: int = 3

    def __post_init__(self) -> None:
        if self.k_retrieve < 1:
            raise ValueError("k_retrieve must be >= 1")


def build_corpus_index(gateway: Gateway, corpus: Corpus, embedder: ModelEndpoint) -> VectorIndex:
    texts = [chunk.text for chunk in corpus.chunks]
    vectors = gateway.embed_texts(texts, embedder)
    return build_index([chunk.chunk_id for chunk in corpus.chunks], vectors)


def answer_with_rag(
    gateway: Gateway,
    question: str,
    index: VectorIndex,
    corpus: Corpus,
    cfg: RagConfig,
    *,
    seed: int | None = None,
) -> tuple[str | None, RetrievalResult]:
    """Retrieve top-k chunks, prompt the generator with them in rank order, return both.

    A failed or empty generation returns answer None; the retrieval result is
    still usable for rank accounting.
    """
    qvec = gateway.embed_texts([question], cfg.embedder)[0]
    result = query_top_k(index, qvec, cfg.k_retrieve, query_id=question[:48])
    context = "\n\n".join(corpus.chunk_by_id(cid).text for cid, _ in result.ranked)
    prompt = load_template("rag_answer").format(context=context, question=question)
    req = ChatRequest.build(
        cfg.generator, prompt, temperature=cfg.temperature, seed=seed
    )
    try:
        text, _ = gateway.chat_complete(cfg.generator, req)
    except TransportError as exc:
        log.warning("generation failed, question marked unscored: %s", exc)
        return None, result
    text = text.strip()
    return (text or None), result


@dataclass
class EvalRunResult:
    """Per-question records plus aggregates for one dataset/config pair."""

    k: int
    per_question: list
    aggregates: dict
    unscored: dict
    near_miss_count: int
    n_questions: int
    embedder_model: str
    generator_model: str
    judge_model: str

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "per_question": list(self.per_question),
            "aggregates": dict(self.aggregates),
            "unscored": dict(self.unscored),
            "near_miss_count": self.near_miss_count,
            "n_questions": self.n_questions,
            "embedder_model": self.embedder_model,
            "generator_model": self.generator_model,
            "judge_model": self.judge_model,
        }

    @classmethod
    def from_json(cls, data: dict) -> "EvalRunResult":
        return cls(
            k=data["k"],
            per_question=list(data["per_question"]),
            aggregates=dict(data["aggregates"]),
            unscored=dict(data["unscored"]),
            near_miss_count=data["near_miss_count"],
            n_questions=data["n_questions"],
            embedder_model=data["embedder_model"],
            generator_model=data["generator_model"],
            judge_model=data["judge_model"],
        )


def _spans_overlap(corpus: Corpus, truth_id: str, other_id: str) -> bool:
    truth = corpus.chunk_by_id(truth_id)
    other = corpus.chunk_by_id(other_id)
    if truth.doc_id != other.doc_id or truth.chunk_id == other.chunk_id:
        return False
    return other.token_span[0] < truth.token_span[1] and truth.token_span[0] < other.token_span[1]


def _mean_or_none(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def evaluate_run(
    gateway: Gateway,
    dataset: list[QARecord],
    corpus: Corpus,
    cfg: RagConfig,
    *,
    seed: int = 0,
    index: VectorIndex | None = None,
) -> EvalRunResult:
    """Answer every dataset question with RAG and judge the answers.

    Per-metric aggregates are arithmetic means over scored questions; unscored
    questions are counted per metric and excluded. Retrieval aggregates come
    from the stored ranks.
    """
    if not dataset:
        raise ValueError("evaluate_run needs a non-empty dataset")
    for qa in dataset:
        if qa.chunk_id not in corpus:
            raise CorpusError(f"dataset references unknown chunk {qa.chunk_id!r}")
    if index is None:
        index = build_corpus_index(gateway, corpus, cfg.embedder)

    per_question: list[dict] = []
    outcomes: list[RetrievalOutcome] = []
    unscored = {"generation": 0, "answer_correctness": 0, "faithfulness": 0, "answer_relevance": 0}
    near_miss_count = 0
    collected: dict[str, list[float]] = {
        "answer_correctness": [],
        "faithfulness": [],
        "answer_relevance": [],
    }

    for qa in dataset:
        qseed = derive_seed(seed, f"rag:{qa.qa_id}")
        answer, result = answer_with_rag(gateway, qa.question, index, corpus, cfg, seed=qseed)
        rank = rank_of_truth(result, qa.chunk_id)
        outcomes.append(
            RetrievalOutcome(query_id=qa.qa_id, truth_chunk_id=qa.chunk_id, rank=rank, k=result.k)
        )
        retrieved_ids = [cid for cid, _ in result.ranked]
        retrieved_texts = [corpus.chunk_by_id(cid).text for cid in retrieved_ids]
        near_miss = rank is None and any(
            _spans_overlap(corpus, qa.chunk_id, cid) for cid in retrieved_ids
        )
        if near_miss:
            near_miss_count += 1

        scores: dict = {"answer_correctness": None, "faithfulness": None, "answer_relevance": None}
        if answer is None:
            unscored["generation"] += 1
        else:
            ac = score_answer_correctness(gateway, cfg.judge, answer, qa.answer, seed=qseed)
            if ac.parse_ok:
                scores["answer_correctness"] = ac.value
                collected["answer_correctness"].append(float(ac.value))
            else:
                unscored["answer_correctness"] += 1
            faith = score_faithfulness(gateway, cfg.judge, answer, retrieved_texts, seed=qseed)
            if faith.parse_ok:
                scores["faithfulness"] = faith.value
                collected["faithfulness"].append(float(faith.value))
            else:
                unscored["faithfulness"] += 1
            rel = score_answer_relevance(
                gateway, cfg.judge, cfg.embedder, answer, qa.question,
                n=cfg.relevance_n, seed=qseed,
            )
            if rel.parse_ok:
                scores["answer_relevance"] = rel.value
                collected["answer_relevance"].append(float(rel.value))
            else:
                unscored["answer_relevance"] += 1

        per_question.append(
            {
                "qa_id": qa.qa_id,
                "question": qa.question,
                "reference_answer": qa.answer,
                "generated_answer": answer,
                "truth_chunk_id": qa.chunk_id,
                "rank": rank,
                "retrieved_chunk_ids": retrieved_ids,
                "retrieved_texts": retrieved_texts,
                "scores": scores,
                "near_miss": near_miss,
            }
        )

    aggregates = {
        "answer_correctness": _mean_or_none(collected["answer_correctness"]),
        "faithfulness": _mean_or_none(collected["faithfulness"]),
        "answer_relevance": _mean_or_none(collected["answer_relevance"]),
        "recall_at_k": recall_at_k(outcomes, cfg.k_retrieve),
        "mrr_at_k": mrr_at_k(outcomes, cfg.k_retrieve),
    }
    return EvalRunResult(
        k=cfg.k_retrieve,
        per_question=per_question,
        aggregates=aggregates,
        unscored=unscored,
        near_miss_count=near_miss_count,
        n_questions=len(dataset),
        embedder_model=cfg.embedder.model_name,
        generator_model=cfg.generator.model_name,
        judge_model=cfg.judge.model_name,
    )


def evaluate_retrieval(
    gateway: Gateway,
    dataset: list[QARecord],
    corpus: Corpus,
    cfg: RagConfig,
    *,
    index: VectorIndex | None = None,
) -> dict:
    """Retrieval-only scoring: ranks, Recall@K, MRR@K, and near-miss adjacency count."""
    if not dataset:
        raise ValueError("evaluate_retrieval needs a non-empty dataset")
    for qa in dataset:
        if qa.chunk_id not in corpus:
            raise CorpusError(f"dataset references unknown chunk {qa.chunk_id!r}")
    if index is None:
        index = build_corpus_index(gateway, corpus, cfg.embedder)
    outcomes = []
    ranks = []
    near_miss_count = 0
    for qa in dataset:
        qvec = gateway.embed_texts([qa.question], cfg.embedder)[0]
        result = query_top_k(index, qvec, cfg.k_retrieve, query_id=qa.qa_id)
        rank = rank_of_truth(result, qa.chunk_id)
        outcomes.append(
            RetrievalOutcome(query_id=qa.qa_id, truth_chunk_id=qa.chunk_id, rank=rank, k=result.k)
        )
        if rank is None and any(
            _spans_overlap(corpus, qa.chunk_id, cid) for cid, _ in result.ranked
        ):
            near_miss_count += 1
        ranks.append({"qa_id": qa.qa_id, "rank": rank})
    return {
        "k": cfg.k_retrieve,
        "embedder_model": cfg.embedder.model_name,
        "n_questions": len(dataset),
        "ranks": ranks,
        "recall_at_k": recall_at_k(outcomes, cfg.k_retrieve),
        "mrr_at_k": mrr_at_k(outcomes, cfg.k_retrieve),
        "near_miss_count": near_miss_count,
    }


def ablate_chunk_count(
    gateway: Gateway,
    dataset: list[QARecord],
    corpus: Corpus,
    cfg: RagConfig,
    k_values=tuple(range(1, 11)),
    *,
    seed: int = 0,
) -> dict[int, EvalRunResult]:
    """One evaluate_run per retrieved-chunk count; the gateway cache shares the embeddings."""
    if not k_values:
        raise ValueError("ablate_chunk_count needs at least one k value")
    index = build_corpus_index(gateway, corpus, cfg.embedder)
    results: dict[int, EvalRunResult] = {}
    for k in k_values:
        run_cfg = replace(cfg, k_retrieve=int(k))
        results[int(k)] = evaluate_run(
            gateway, dataset, corpus, run_cfg, seed=seed, index=index
        )
    return results


def ablation_grid(results: dict[int, EvalRunResult]) -> list[dict]:
    """Flatten an ablation sweep into rows of k plus each aggregate metric."""
    rows = []
    for k in sorted(results):
        agg = results[k].aggregates
        rows.append(
            {
                "k": k,
                "answer_correctness": agg["answer_correctness"],
                "faithfulness": agg["faithfulness"],
                "answer_relevance": agg["answer_relevance"],
                "recall_at_k": agg["recall_at_k"],
                "mrr_at_k": agg["mrr_at_k"],
            }
        )
    return rows


@dataclass
class FailureLabel:
    qa_id: str
    labels: tuple
    rationale: str

    def __post_init__(self) -> None:
        unknown = [l for l in self.labels if l not in FAILURE_CATEGORIES]
        if unknown:
            raise ValueError(f"unknown failure categories: {unknown}")

    def to_json(self) -> dict:
        return {"qa_id": self.qa_id, "labels": list(self.labels), "rationale": self.rationale}


_LABEL_LINE = re.compile(r"failure_labels\s*:\s*(.*)", re.IGNORECASE)


def parse_failure_labels(raw: str) -> tuple | None:
    """Labels from the last failure_labels line; None when unparseable."""
    hits = _LABEL_LINE.findall(raw)
    if not hits:
        return None
    rest = hits[-1].strip()
    if not rest:
        return None
    canonical = {c.casefold(): c for c in FAILURE_CATEGORIES}
    labels = []
    for token in rest.split(","):
        token = token.strip().strip(".").casefold()
        if not token:
            continue
        if token in ("none", "no failures"):
            return ()
        if token in canonical and canonical[token] not in labels:
            labels.append(canonical[token])
    if not labels:
        return None
    return tuple(labels)


@dataclass
class FailureAnalysis:
    """Taxonomy labels over low-scoring answers, with counts and quartile buckets."""

    labels: list
    counts: dict
    percentages: dict
    judge_failures: int
    unscored: int
    n_questions: int
    quartiles: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "labels": [l.to_json() for l in self.labels],
            "counts": dict(self.counts),
            "percentages": dict(self.percentages),
            "judge_failures": self.judge_failures,
            "unscored": self.unscored,
            "n_questions": self.n_questions,
            "quartiles": {k: dict(v) for k, v in self.quartiles.items()},
        }


def analyze_failures(
    gateway: Gateway,
    run: EvalRunResult,
    judge: ModelEndpoint,
    *,
    threshold: float = 1.0,
    seed: int = 0,
) -> FailureAnalysis:
    """Label every question with answer correctness below the threshold.

    Percentages use all correctness-scored questions minus taxonomy judge
    failures as the denominator; multiple labels per question are allowed, so
    they can sum past 100. Quartile buckets cover scores strictly below 1.0.
    """
    template = load_template("failure_taxonomy")
    labels: list[FailureLabel] = []
    judge_failures = 0
    unscored = 0
    analyzed_scores: dict[str, float] = {}
    clean = 0

    for record in run.per_question:
        score = record["scores"].get("answer_correctness")
        if score is None:
            unscored += 1
            continue
        if score >= threshold:
            clean += 1
            continue
        prompt = template.format(
            question=record["question"],
            reference_answer=record["reference_answer"],
            generated_answer=record["generated_answer"] or "",
            contexts="\n\n".join(record["retrieved_texts"]),
        )
        req = ChatRequest.build(
            judge, prompt, temperature=0.0, seed=derive_seed(seed, f"failure:{record['qa_id']}"),
            is_judge=True,
        )
        text, _ = gateway.chat_complete(judge, req)
        parsed = parse_failure_labels(text)
        if parsed is None:
            text, _ = gateway.chat_complete(judge, req, refresh=True)
            parsed = parse_failure_labels(text)
        if parsed is None:
            judge_failures += 1
            continue
        labels.append(FailureLabel(qa_id=record["qa_id"], labels=parsed, rationale=text))
        analyzed_scores[record["qa_id"]] = float(score)
        if not parsed:
            clean += 1

    counts = {category: 0 for category in FAILURE_CATEGORIES}
    for item in labels:
        for category in item.labels:
            counts[category] += 1
    counts[NO_FAILURES] = clean

    denominator = (run.n_questions - unscored) - judge_failures
    percentages = {
        category: (100.0 * n / denominator if denominator > 0 else 0.0)
        for category, n in counts.items()
    }

    quartiles: dict[str, dict] = {}
    below_one = sorted(s for s in analyzed_scores.values() if s < 1.0)
    if below_one:
        bounds = [float(b) for b in np.quantile(below_one, [0.25, 0.5, 0.75])]

        def bucket_of(s: float) -> str:
            if s <= bounds[0]:
                return "q1"
            if s <= bounds[1]:
                return "q2"
            if s <= bounds[2]:
                return "q3"
            return "q4"

        quartiles = {
            "bounds": {"q1_max": bounds[0], "q2_max": bounds[1], "q3_max": bounds[2]},
            "q1": {c: 0 for c in FAILURE_CATEGORIES},
            "q2": {c: 0 for c in FAILURE_CATEGORIES},
            "q3": {c: 0 for c in FAILURE_CATEGORIES},
            "q4": {c: 0 for c in FAILURE_CATEGORIES},
        }
        for item in labels:
            score = analyzed_scores.get(item.qa_id)
            if score is None or score >= 1.0:
                continue
            bucket = bucket_of(score)
            for category in item.labels:
                quartiles[bucket][category] += 1

    return FailureAnalysis(
        labels=labels,
        counts=counts,
        percentages=percentages,
        judge_failures=judge_failures,
        unscored=unscored,
        n_questions=run.n_questions,
        quartiles=quartiles,
    )


def self_bias_matrix(
    gateway: Gateway,
    datasets: dict[str, list[QARecord]],
    generators: dict[str, ModelEndpoint],
    corpus: Corpus,
    cfg: RagConfig,
    *,
    seed: int = 0,
) -> dict:
    """Evaluate every (dataset origin, generator) pair; mark the best origin per column.

    Accepts a single origin or generator for smoke runs, though bias reads need
    at least two of each.
    """
    if not datasets or not generators:
        raise ValueError("self_bias_matrix needs at least one dataset and one generator")
    index = build_corpus_index(gateway, corpus, cfg.embedder)
    metrics = ("answer_correctness", "faithfulness", "answer_relevance")
    scores: dict[str, dict] = {}
    for origin in sorted(datasets):
        scores[origin] = {}
        for model_name in sorted(generators):
            run_cfg = replace(cfg, generator=generators[model_name])
            run = evaluate_run(
                gateway, datasets[origin], corpus, run_cfg,
                seed=derive_seed(seed, f"bias:{origin}:{model_name}"), index=index,
            )
            scores[origin][model_name] = {m: run.aggregates[m] for m in metrics}
    best_origin: dict[str, dict] = {}
    for model_name in sorted(generators):
        best_origin[model_name] = {}
        for metric in metrics:
            best, best_value = None, None
            for origin in sorted(datasets):
                value = scores[origin][model_name][metric]
                if value is not None and (best_value is None or value > best_value):
                    best, best_value = origin, value
            best_origin[model_name][metric] = best
    return {"scores": scores, "best_origin": best_origin}
