"""Human-alignment validation: benchmark loaders, tie-aware Spearman, Bonett-Wright SE."""

from __future__ import annotations

import csv
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ZeroVarianceError
from .gateway import Gateway, ModelEndpoint
from .judges import BINARY, PromptProgram, score_with_program

log = logging.getLogger(__name__)


@dataclass
class LabeledExample:
    """A benchmark item: judge inputs plus the human gold value."""

    inputs: dict
    gold: float

    def __post_init__(self) -> None:
        if not self.inputs:
            raise ValueError("LabeledExample needs at least one input field")
        if not isinstance(self.gold, (int, float)) or isinstance(self.gold, bool):
            raise ValueError("gold must be numeric")


def load_stsb(path: str | Path, n: int | None = None, seed: int = 0) -> list[LabeledExample]:
    """Load sentence-pair rows: first sentence is the reference, gold = score / 5."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"benchmark file not found: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        first = fh.readline()
        delimiter = "\t" if "\t" in first else ","
        fh.seek(0)
        reader = csv.DictReader(fh, delimiter=delimiter)
        examples: list[LabeledExample] = []
        skipped = 0
        for row in reader:
            try:
                reference = (row["sentence1"] or "").strip()
                generated = (row["sentence2"] or "").strip()
                score = float(row["score"])
            except (KeyError, TypeError, ValueError):
                skipped += 1
                continue
            if not reference or not generated or not 0.0 <= score <= 5.0:
                skipped += 1
                continue
            examples.append(
                LabeledExample(inputs={"response": generated, "reference": reference}, gold=score / 5.0)
            )
    if skipped:
        log.warning("load_stsb: skipped %d malformed rows in %s", skipped, path)
    return _sample(examples, n, seed, "STS-B")


def load_squad2(path: str | Path, n: int | None = None, seed: int = 0) -> list[LabeledExample]:
    """Load (question, context) pairs; gold = 1 unless the item is marked impossible."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"benchmark file not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    examples: list[LabeledExample] = []
    skipped = 0
    for article in data.get("data", []):
        for paragraph in article.get("paragraphs", []):
            context = (paragraph.get("context") or "").strip()
            if not context:
                skipped += len(paragraph.get("qas", []))
                continue
            for qa in paragraph.get("qas", []):
                question = (qa.get("question") or "").strip()
                if not question:
                    skipped += 1
                    continue
                gold = 0.0 if qa.get("is_impossible", False) else 1.0
                examples.append(
                    LabeledExample(inputs={"question": question, "context": context}, gold=gold)
                )
    if skipped:
        log.warning("load_squad2: skipped %d items without context or question", skipped)
    return _sample(examples, n, seed, "SQuAD-2.0")


def _sample(examples: list[LabeledExample], n: int | None, seed: int, label: str) -> list[LabeledExample]:
    if n is None:
        return examples
    if n > len(examples):
        raise ValueError(f"{label} has only {len(examples)} usable items, asked for {n}")
    return random.Random(seed).sample(examples, n)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean of the positions they span."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(xs, ys) -> float:
    """Tie-aware Spearman: Pearson correlation of average-ranked data."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman_rho needs two equal-length 1-D sequences")
    if len(x) < 2:
        raise ValueError("spearman_rho needs at least 2 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ZeroVarianceError("zero variance")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    return float(np.dot(rx, ry) / math.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))


def bonett_wright_se(rho_s: float, n: int) -> float:
    """Closed-form standard error for a Spearman coefficient: sqrt((1 + rho^2/2) / (n - 3))."""
    if n < 4:
        raise ValueError("bonett_wright_se needs n >= 4")
    if not -1.0 <= rho_s <= 1.0:
        raise ValueError("rho_s must lie in [-1, 1]")
    return math.sqrt((1.0 + rho_s**2 / 2.0) / (n - 3))


@dataclass
class AlignmentReport:
    """Alignment of one judge metric against human gold labels."""

    metric_name: str
    program_name: str
    judge_model: str
    n: int
    rho_s: float | None
    se: float | None
    parse_failures: int
    valid: bool
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "metric_name": self.metric_name,
            "program_name": self.program_name,
            "judge_model": self.judge_model,
            "n": self.n,
            "rho_s": self.rho_s,
            "se": self.se,
            "parse_failures": self.parse_failures,
            "valid": self.valid,
            "notes": list(self.notes),
        }

    def markdown_row(self) -> str:
        rho = f"{self.rho_s:.3f}" if self.rho_s is not None else "n/a"
        method = self.program_name or self.metric_name
        return f"| {method} | {self.judge_model} | {rho} |"


def validate_metric_alignment(
    gateway: Gateway,
    program: PromptProgram,
    examples: list[LabeledExample],
    judge: ModelEndpoint,
    *,
    seed: int | None = None,
) -> AlignmentReport:
    """Score every example with the program and correlate against the gold labels."""
    if len(examples) < 4:
        raise ValueError("validate_metric_alignment needs at least 4 examples")
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

    notes: list[str] = []
    valid = True
    if parse_failures > 0.2 * len(examples):
        valid = False
        notes.append(f"invalid: {parse_failures}/{len(examples)} parse failures exceed 20%")
    if program.scale == BINARY:
        notes.append("binary-vs-binary Spearman degenerates to a phi-type coefficient")

    rho: float | None = None
    se: float | None = None
    if len(scores) >= 4:
        try:
            rho = spearman_rho(scores, golds)
            se = bonett_wright_se(rho, len(scores))
        except ZeroVarianceError:
            valid = False
            notes.append("invalid: zero variance")
    else:
        valid = False
        notes.append(f"invalid: only {len(scores)} scored examples")

    return AlignmentReport(
        metric_name=program.metric_name,
        program_name=program.name,
        judge_model=judge.model_name,
        n=len(scores),
        rho_s=rho,
        se=se,
        parse_failures=parse_failures,
        valid=valid,
        notes=notes,
    )
