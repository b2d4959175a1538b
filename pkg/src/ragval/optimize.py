"""Prompt optimization: few-shot demo sampling, instruction rewriting, joint random search."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

from .alignment import LabeledExample, spearman_rho
from .config import derive_seed
from .errors import EvaluationInvalidError, TransportError, ZeroVarianceError
from .gateway import ChatRequest, Gateway, ModelEndpoint
from .judges import PromptProgram, program_digest, score_with_program

log = logging.getLogger(__name__)

DEMO_SUBSET_SIZES = (0, 2, 4, 8)

_PROPOSER_PROMPT = """You will be given an instruction used to prompt a language model.

Write an improved version of the instruction: clearer, more precise, and better at eliciting accurate judgments, while keeping the same task and the same output format. The improved instruction MUST keep the literal text '{output_field}:' somewhere in it. Write only the improved instruction, nothing else.

instruction:
{instruction}"""


def evaluate_program(
    gateway: Gateway,
    program: PromptProgram,
    examples: list[LabeledExample],
    judge: ModelEndpoint,
    *,
    seed: int | None = None,
) -> float:
    """Alignment of a program against labeled examples: Spearman of judge scores vs gold."""
    if len(examples) < 10:
        raise ValueError("evaluate_program needs at least 10 examples")
    scores: list[float] = []
    golds: list[float] = []
    parse_failures = 0
    for ex in examples:
        ms = score_with_program(gateway, judge, program, ex.inputs, seed=seed)
        if not ms.parse_ok:
            parse_failures += 1
            continue
        scores.append(float(ms.value))
        golds.append(float(ex.gold))
    if parse_failures > 0.2 * len(examples):
        raise EvaluationInvalidError(
            f"{parse_failures}/{len(examples)} parse failures exceed 20%"
        )
    try:
        return spearman_rho(scores, golds)
    except (ZeroVarianceError, ValueError) as exc:
        raise EvaluationInvalidError(f"zero variance: {exc}")


def _demo_from_example(example: LabeledExample, program: PromptProgram) -> dict:
    if set(example.inputs) != set(program.input_fields):
        raise ValueError(
            f"example fields {sorted(example.inputs)} do not match program fields "
            f"{sorted(program.input_fields)}"
        )
    return {**example.inputs, program.output_field: example.gold}


def labeled_few_shot(
    program: PromptProgram, labeled: list[LabeledExample], k: int, seed: int
) -> PromptProgram:
    """Append k uniformly sampled labeled examples as demos; instruction unchanged."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k > len(labeled):
        raise ValueError(f"k={k} exceeds labeled set size {len(labeled)}")
    if k == 0:
        return program
    sample = random.Random(seed).sample(labeled, k)
    demos = program.demos + tuple(_demo_from_example(ex, program) for ex in sample)
    name = f"{program.name or program.metric_name}-fewshot-k{k}"
    return replace(program, demos=demos, name=name)


@dataclass
class OptimizationTrace:
    """Append-only record of one optimization run."""

    optimizer: str
    candidates: list = field(default_factory=list)
    best_history: list = field(default_factory=list)
    best_program: PromptProgram | None = None
    best_score: float | None = None
    val_score: float | None = None
    iterations: int = 0
    train_size: int = 0
    val_size: int = 0
    rejected_rewrites: int = 0

    def record(self, digest: str, score: float | None, note: str) -> None:
        self.candidates.append({"digest": digest, "score": score, "note": note})
        if score is not None and self.best_score is not None:
            self.best_history.append(self.best_score)

    def to_json(self) -> dict:
        return {
            "optimizer": self.optimizer,
            "candidates": list(self.candidates),
            "best_history": list(self.best_history),
            "best_program": self.best_program.to_json() if self.best_program else None,
            "best_score": self.best_score,
            "val_score": self.val_score,
            "iterations": self.iterations,
            "train_size": self.train_size,
            "val_size": self.val_size,
            "rejected_rewrites": self.rejected_rewrites,
        }


def save_trace(trace: OptimizationTrace, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(trace.to_json(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def _example_key(example: LabeledExample) -> str:
    return json.dumps({"inputs": example.inputs, "gold": example.gold}, sort_keys=True)


def _check_disjoint(train: list[LabeledExample], val: list[LabeledExample]) -> None:
    shared = {_example_key(e) for e in train} & {_example_key(e) for e in val}
    if shared:
        raise ValueError(f"train and val sets share {len(shared)} examples")


def _propose_rewrite(
    gateway: Gateway,
    proposer: ModelEndpoint,
    program: PromptProgram,
    *,
    seed: int,
    temperature: float,
) -> str | None:
    """One instruction rewrite; None when the proposer fails outright."""
    prompt = _PROPOSER_PROMPT.format(
        output_field=program.output_field, instruction=program.instruction
    )
    req = ChatRequest.build(proposer, prompt, temperature=temperature, seed=seed)
    try:
        text, _ = gateway.chat_complete(proposer, req)
    except TransportError as exc:
        log.warning("proposer call failed, shrinking round: %s", exc)
        return None
    return text.strip()


def _score_or_none(
    gateway: Gateway,
    program: PromptProgram,
    examples: list[LabeledExample],
    judge: ModelEndpoint,
    trace: OptimizationTrace,
    note: str,
) -> float | None:
    try:
        return evaluate_program(gateway, program, examples, judge)
    except EvaluationInvalidError as exc:
        trace.record(program_digest(program), None, f"{note} invalid: {exc}")
        return None


def copro_optimize(
    gateway: Gateway,
    program: PromptProgram,
    train: list[LabeledExample],
    val: list[LabeledExample],
    judge: ModelEndpoint,
    proposer: ModelEndpoint,
    *,
    breadth: int = 4,
    depth: int = 3,
    seed: int = 0,
    proposer_temperature: float = 0.9,
) -> OptimizationTrace:
    """Coordinate ascent on the instruction: d rounds of b rewrites, keep strict improvements."""
    if breadth < 1:
        raise ValueError("breadth must be >= 1")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    _check_disjoint(train, val)
    trace = OptimizationTrace(
        optimizer="copro", iterations=depth, train_size=len(train), val_size=len(val)
    )
    best = program
    best_score = _score_or_none(gateway, program, train, judge, trace, "seed program")
    if best_score is not None:
        trace.best_score = best_score
        trace.record(program_digest(program), best_score, "seed program")
    for round_index in range(1, depth + 1):
        current = best
        for proposal_index in range(breadth):
            pseed = derive_seed(seed, f"copro:{round_index}:{proposal_index}")
            rewrite = _propose_rewrite(
                gateway, proposer, current, seed=pseed, temperature=proposer_temperature
            )
            if rewrite is None:
                continue
            if not rewrite or f"{current.output_field}:" not in rewrite:
                trace.rejected_rewrites += 1
                continue
            candidate = replace(
                current, instruction=rewrite, name=f"copro-r{round_index}c{proposal_index}"
            )
            note = f"round {round_index} candidate {proposal_index}"
            score = _score_or_none(gateway, candidate, train, judge, trace, note)
            if score is None:
                continue
            if trace.best_score is None or score > trace.best_score:
                best = candidate
                trace.best_score = score
            trace.record(program_digest(candidate), score, note)
    trace.best_program = best
    try:
        trace.val_score = evaluate_program(gateway, best, val, judge)
    except EvaluationInvalidError as exc:
        log.warning("validation scoring invalid: %s", exc)
        trace.val_score = None
    return trace


def mipro_lite(
    gateway: Gateway,
    program: PromptProgram,
    train: list[LabeledExample],
    val: list[LabeledExample],
    judge: ModelEndpoint,
    proposer: ModelEndpoint,
    *,
    trials: int = 20,
    seed: int = 0,
    proposer_temperature: float = 0.9,
) -> OptimizationTrace:
    """Random joint search: each trial pairs an instruction rewrite with a demo subset.

    Demo subsets replace the base program's demos; sizes are drawn from
    DEMO_SUBSET_SIZES (capped by the train-set size). Best by train score,
    reported on val.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    _check_disjoint(train, val)
    trace = OptimizationTrace(
        optimizer="mipro_lite", iterations=trials, train_size=len(train), val_size=len(val)
    )
    best = program
    sizes = [s for s in DEMO_SUBSET_SIZES if s <= len(train)]
    for trial in range(trials):
        tseed = derive_seed(seed, f"mipro:{trial}")
        rewrite = _propose_rewrite(
            gateway, proposer, program, seed=tseed, temperature=proposer_temperature
        )
        if rewrite is None:
            continue
        if not rewrite or f"{program.output_field}:" not in rewrite:
            trace.rejected_rewrites += 1
            continue
        rng = random.Random(derive_seed(tseed, "demos"))
        size = rng.choice(sizes)
        demos = tuple(
            _demo_from_example(ex, program) for ex in rng.sample(train, size)
        )
        candidate = replace(program, instruction=rewrite, demos=demos, name=f"mipro-t{trial}")
        note = f"trial {trial} (demos={size})"
        score = _score_or_none(gateway, candidate, train, judge, trace, note)
        if score is None:
            continue
        if trace.best_score is None or score > trace.best_score:
            best = candidate
            trace.best_score = score
        trace.record(program_digest(candidate), score, note)
    trace.best_program = best
    try:
        trace.val_score = evaluate_program(gateway, best, val, judge)
    except EvaluationInvalidError as exc:
        log.warning("validation scoring invalid: %s", exc)
        trace.val_score = None
    return trace
