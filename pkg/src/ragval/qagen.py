"""Synthetic QA dataset generation: sample, generate, filter, emit JSONL."""

from __future__ import annotations

import json
import logging
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import derive_seed
from .errors import PipelineError
from .gateway import ChatRequest, Gateway, ModelEndpoint
from .ingest import Chunk, Corpus
from .judges import (
    MetricScore,
    load_program,
    load_template,
    score_answer_relevance,
    score_answerability,
    score_faithfulness,
    score_with_program,
)

log = logging.getLogger(__name__)

REJECTION_REASONS = (
    "answerability",
    "faithfulness",
    "answer_relevance",
    "judge-failure",
    "empty-generation",
)


@dataclass(frozen=True)
class FilterThresholds:
    """Minimum filter scores a candidate must meet to enter the dataset."""

    answerability_min: int = 1
    faithfulness_min: float = 0.8
    relevance_min: float = 0.8

    def __post_init__(self) -> None:
        if self.answerability_min not in (0, 1):
            raise ValueError("answerability_min must be 0 or 1")
        if not 0.0 <= self.faithfulness_min <= 1.0:
            raise ValueError("faithfulness_min must be in [0, 1]")
        if not 0.0 <= self.relevance_min <= 1.0:
            raise ValueError("relevance_min must be in [0, 1]")


@dataclass
class QARecord:
    """One accepted question/answer pair grounded in a source chunk."""

    qa_id: str
    question: str
    answer: str
    chunk_id: str
    filter_scores: dict
    generator_model: str
    attempt_index: int

    def to_json(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "question": self.question,
            "answer": self.answer,
            "chunk_id": self.chunk_id,
            "filter_scores": self.filter_scores,
            "generator_model": self.generator_model,
            "attempt_index": self.attempt_index,
        }

    @classmethod
    def from_json(cls, data: dict) -> "QARecord":
        return cls(
            qa_id=data["qa_id"],
            question=data["question"],
            answer=data["answer"],
            chunk_id=data["chunk_id"],
            filter_scores=dict(data["filter_scores"]),
            generator_model=data["generator_model"],
            attempt_index=data["attempt_index"],
        )


@dataclass
class GenerationStats:
    requested: int
    accepted: int
    attempts: int
    rejected_by_metric: dict
    wall_seconds: float
    samples_per_minute: float

    def __post_init__(self) -> None:
        if self.accepted + sum(self.rejected_by_metric.values()) != self.attempts:
            raise ValueError("accepted + rejections must equal attempts")

    def to_json(self) -> dict:
        return {
            "requested": self.requested,
            "accepted": self.accepted,
            "attempts": self.attempts,
            "rejected_by_metric": self.rejected_by_metric,
            "wall_seconds": self.wall_seconds,
            "samples_per_minute": self.samples_per_minute,
        }


@dataclass
class GenerationConfig:
    """Endpoints, personas, and knobs for one generation run."""

    generator: ModelEndpoint
    judge: ModelEndpoint
    embedder: ModelEndpoint
    thresholds: FilterThresholds = field(default_factory=FilterThresholds)
    user_persona: str = "a reader studying the material"
    sme_persona: str = "an experienced practitioner of the material"
    temperature: float = 0.7
    attempt_budget_factor: int = 10
    relevance_n: int = 3

    def __post_init__(self) -> None:
        if self.attempt_budget_factor < 1:
            raise ValueError("attempt_budget_factor must be >= 1")
        if self.relevance_n < 1:
            raise ValueError("relevance_n must be >= 1")


def sample_contexts(corpus: Corpus, n: int, seed: int) -> list[Chunk]:
    """Uniformly sample n chunks: without replacement per epoch, reshuffling on exhaustion."""
    if n <= 0:
        raise ValueError("sample_contexts needs n > 0")
    if not corpus.chunks:
        raise ValueError("sample_contexts needs a non-empty corpus")
    rng = random.Random(seed)
    out: list[Chunk] = []
    while len(out) < n:
        epoch = list(corpus.chunks)
        rng.shuffle(epoch)
        out.extend(epoch[: n - len(out)])
    return out


def _generate_text(
    gateway: Gateway, endpoint: ModelEndpoint, prompt: str, temperature: float, seed: int
) -> str:
    req = ChatRequest.build(endpoint, prompt, temperature=temperature, seed=seed)
    text, _ = gateway.chat_complete(endpoint, req)
    return text.strip()


def generate_question(gateway: Gateway, chunk: Chunk, cfg: GenerationConfig, *, seed: int) -> str:
    """Write one self-contained question for a chunk; self-check once, regenerate once.

    The self-check is a binary judge call. A failed check spends the single
    regeneration; an unparseable check keeps the question (downstream filters
    still guard quality). Empty text twice aborts the attempt.
    """
    if not chunk.text.strip():
        raise ValueError("generate_question needs a chunk with text")
    prompt = load_template("question_user").format(persona=cfg.user_persona, context=chunk.text)
    question = _generate_text(gateway, cfg.generator, prompt, cfg.temperature, seed)
    regen_seed = derive_seed(seed, "question-regen")
    regenerated = False
    if not question:
        regenerated = True
        question = _generate_text(gateway, cfg.generator, prompt, cfg.temperature, regen_seed)
        if not question:
            raise PipelineError("question generation returned empty text twice")
    check = score_with_program(
        gateway, cfg.judge, load_program("question_check"), {"question": question}, seed=seed
    )
    if check.parse_ok and check.value == 0 and not regenerated:
        retry = _generate_text(gateway, cfg.generator, prompt, cfg.temperature, regen_seed)
        if retry:
            question = retry
    return question


def generate_answer(
    gateway: Gateway, question: str, chunk: Chunk, cfg: GenerationConfig, *, seed: int
) -> str:
    """Answer the question from the chunk text alone; one retry on empty output."""
    if not question.strip() or not chunk.text.strip():
        raise ValueError("generate_answer needs a question and a chunk with text")
    prompt = load_template("answer_sme").format(
        persona=cfg.sme_persona, context=chunk.text, question=question
    )
    answer = _generate_text(gateway, cfg.generator, prompt, cfg.temperature, seed)
    if not answer:
        answer = _generate_text(
            gateway, cfg.generator, prompt, cfg.temperature, derive_seed(seed, "answer-regen")
        )
        if not answer:
            raise PipelineError("answer generation returned empty text twice")
    return answer


@dataclass
class ValidationResult:
    accepted: bool
    reason: str | None
    scores: dict
    metric_scores: dict

    def __post_init__(self) -> None:
        if self.accepted and self.reason is not None:
            raise ValueError("accepted results carry no rejection reason")
        if not self.accepted and self.reason not in REJECTION_REASONS:
            raise ValueError(f"unknown rejection reason: {self.reason!r}")


def validate_candidate(
    gateway: Gateway,
    question: str,
    answer: str,
    context: str,
    thresholds: FilterThresholds,
    judge: ModelEndpoint,
    embedder: ModelEndpoint,
    *,
    seed: int | None = None,
    relevance_n: int = 3,
) -> ValidationResult:
    """Gate a candidate in fixed order: answerability, faithfulness, answer relevance.

    Evaluation short-circuits at the first failing metric; unevaluated scores
    stay None. An unscorable metric rejects with reason "judge-failure".
    """
    scores: dict = {"answerability": None, "faithfulness": None, "answer_relevance": None}
    metric_scores: dict[str, MetricScore] = {}

    def reject(reason: str) -> ValidationResult:
        return ValidationResult(False, reason, scores, metric_scores)

    ms = score_answerability(gateway, judge, question, context, seed=seed)
    metric_scores["answerability"] = ms
    if not ms.parse_ok:
        return reject("judge-failure")
    scores["answerability"] = ms.value
    if ms.value < thresholds.answerability_min:
        return reject("answerability")

    ms = score_faithfulness(gateway, judge, answer, [context], seed=seed)
    metric_scores["faithfulness"] = ms
    if not ms.parse_ok:
        return reject("judge-failure")
    scores["faithfulness"] = ms.value
    if ms.value < thresholds.faithfulness_min:
        return reject("faithfulness")

    ms = score_answer_relevance(gateway, judge, embedder, answer, question, n=relevance_n, seed=seed)
    metric_scores["answer_relevance"] = ms
    if not ms.parse_ok:
        return reject("judge-failure")
    scores["answer_relevance"] = ms.value
    if ms.value < thresholds.relevance_min:
        return reject("answer_relevance")

    return ValidationResult(True, None, scores, metric_scores)


def generate_dataset(
    gateway: Gateway,
    corpus: Corpus,
    n_target: int,
    cfg: GenerationConfig,
    seed: int,
) -> tuple[list[QARecord], GenerationStats]:
    """Run sample -> question -> answer -> validate until n_target accepted or budget spent."""
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    budget = cfg.attempt_budget_factor * n_target
    contexts = sample_contexts(corpus, budget, derive_seed(seed, "qagen:sample"))
    records: list[QARecord] = []
    rejections = {reason: 0 for reason in REJECTION_REASONS}
    attempts = 0
    started = time.monotonic()
    for attempt_index, chunk in enumerate(contexts):
        if len(records) >= n_target:
            break
        attempts += 1
        attempt_seed = derive_seed(seed, f"qagen:attempt:{attempt_index}")
        try:
            question = generate_question(gateway, chunk, cfg, seed=attempt_seed)
            answer = generate_answer(
                gateway, question, chunk, cfg, seed=derive_seed(attempt_seed, "answer")
            )
        except PipelineError:
            rejections["empty-generation"] += 1
            continue
        result = validate_candidate(
            gateway,
            question,
            answer,
            chunk.text,
            cfg.thresholds,
            cfg.judge,
            cfg.embedder,
            seed=attempt_seed,
            relevance_n=cfg.relevance_n,
        )
        if result.accepted:
            records.append(
                QARecord(
                    qa_id=f"qa-{attempt_index:05d}",
                    question=question,
                    answer=answer,
                    chunk_id=chunk.chunk_id,
                    filter_scores=dict(result.scores),
                    generator_model=cfg.generator.model_name,
                    attempt_index=attempt_index,
                )
            )
        else:
            rejections[result.reason] += 1
    wall = time.monotonic() - started
    stats = GenerationStats(
        requested=n_target,
        accepted=len(records),
        attempts=attempts,
        rejected_by_metric=rejections,
        wall_seconds=wall,
        samples_per_minute=len(records) / (wall / 60.0) if wall > 0 else 0.0,
    )
    if stats.accepted < n_target:
        log.warning(
            "attempt budget exhausted: accepted %d of %d after %d attempts",
            stats.accepted,
            n_target,
            attempts,
        )
    return records, stats


def write_qa_dataset(records: list[QARecord], path: str | Path) -> None:
    lines = [
        json.dumps(r.to_json(), sort_keys=True, ensure_ascii=False) for r in records
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_qa_dataset(path: str | Path) -> list[QARecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(QARecord.from_json(json.loads(line)))
    return records
