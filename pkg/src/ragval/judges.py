"""LLM-as-judge metrics: prompt programs, output parsing, and the four scorers."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError
from .gateway import ChatRequest, Gateway, ModelEndpoint

UNIT_INTERVAL = "unit-interval"
BINARY = "binary"
SCALES = (UNIT_INTERVAL, BINARY)

# Shipped programs, addressable by short name. Bare metric names resolve to the
# variant that scored best against the human benchmarks.
_PROGRAM_FILES = {
    "answer_correctness": "answer_correctness_optimized.json",
    "answer_correctness_optimized": "answer_correctness_optimized.json",
    "answer_correctness_handcrafted": "answer_correctness_handcrafted.json",
    "answerability": "answerability_handcrafted.json",
    "answerability_handcrafted": "answerability_handcrafted.json",
    "question_check": "question_check.json",
}


def _assets():
    return resources.files("ragval.assets")


def load_template(name: str) -> str:
    """Return a raw prompt template shipped with the package."""
    try:
        return (_assets() / f"{name}.txt").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigurationError(f"unknown prompt template: {name!r}")


@dataclass(frozen=True)
class PromptProgram:
    """A judge prompt: instruction, few-shot demos, and the field to parse back."""

    metric_name: str
    instruction: str
    output_field: str
    scale: str
    input_fields: tuple[str, ...]
    demos: tuple[dict, ...] = ()
    name: str = ""

    def __post_init__(self) -> None:
        if not self.metric_name:
            raise ConfigurationError("PromptProgram needs a metric_name")
        if self.scale not in SCALES:
            raise ConfigurationError(f"unknown scale {self.scale!r}; expected one of {SCALES}")
        if not self.output_field:
            raise ConfigurationError("PromptProgram needs an output_field")
        if f"{self.output_field}:" not in self.instruction:
            raise ConfigurationError(
                f"instruction must name the output field verbatim ({self.output_field!r}:)"
            )
        if not self.input_fields:
            raise ConfigurationError("PromptProgram needs at least one input field")
        object.__setattr__(self, "input_fields", tuple(self.input_fields))
        object.__setattr__(self, "demos", tuple(dict(d) for d in self.demos))
        expected = set(self.input_fields) | {self.output_field}
        for i, demo in enumerate(self.demos):
            if set(demo) != expected:
                raise ConfigurationError(
                    f"demo {i} fields {sorted(demo)} do not match program fields {sorted(expected)}"
                )
            label = demo[self.output_field]
            if not isinstance(label, (int, float)) or isinstance(label, bool):
                raise ConfigurationError(f"demo {i} label must be numeric, got {label!r}")
            if self.scale == BINARY and label not in (0, 1):
                raise ConfigurationError(f"demo {i} label {label!r} is not binary")
            if self.scale == UNIT_INTERVAL and not 0.0 <= float(label) <= 1.0:
                raise ConfigurationError(f"demo {i} label {label!r} outside [0, 1]")

    def to_json(self) -> dict:
        return {
            "metric_name": self.metric_name,
            "name": self.name,
            "scale": self.scale,
            "output_field": self.output_field,
            "input_fields": list(self.input_fields),
            "instruction": self.instruction,
            "demos": [dict(d) for d in self.demos],
        }

    @classmethod
    def from_json(cls, data: dict) -> "PromptProgram":
        return cls(
            metric_name=data["metric_name"],
            instruction=data["instruction"],
            output_field=data["output_field"],
            scale=data["scale"],
            input_fields=tuple(data["input_fields"]),
            demos=tuple(data.get("demos", ())),
            name=data.get("name", ""),
        )


def load_program(name_or_path: str) -> PromptProgram:
    """Load a shipped program by short name, or any program JSON by path."""
    if name_or_path in _PROGRAM_FILES:
        text = (_assets() / _PROGRAM_FILES[name_or_path]).read_text(encoding="utf-8")
        return PromptProgram.from_json(json.loads(text))
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        return PromptProgram.from_json(json.loads(path.read_text(encoding="utf-8")))
    raise ConfigurationError(
        f"unknown program {name_or_path!r}; shipped names: {sorted(set(_PROGRAM_FILES))}"
    )


def save_program(program: PromptProgram, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(program.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def program_digest(program: PromptProgram) -> str:
    """Content hash over everything that affects rendering; the display name is cosmetic."""
    payload = program.to_json()
    payload.pop("name")
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _format_label(value, scale: str) -> str:
    if scale == BINARY:
        return str(int(value))
    return str(float(value))


def render_program(program: PromptProgram, inputs: dict[str, str]) -> str:
    """Render instruction, then demos, then the live input ending at the bare output field."""
    if set(inputs) != set(program.input_fields):
        raise ValueError(
            f"inputs {sorted(inputs)} do not match program fields {sorted(program.input_fields)}"
        )
    parts = [program.instruction]
    for demo in program.demos:
        lines = [f"{f}:\n{demo[f]}" for f in program.input_fields]
        lines.append(f"{program.output_field}: {_format_label(demo[program.output_field], program.scale)}")
        parts.append("\n\n".join(lines))
    live = [f"{f}:\n{inputs[f]}" for f in program.input_fields]
    live.append(f"{program.output_field}:")
    parts.append("\n\n".join(live))
    return "\n\n".join(parts)


_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


def parse_judge_output(raw: str, output_field: str, scale: str) -> tuple[float | int, bool]:
    """Extract the verdict number after the last `output_field:` marker.

    Returns (value, clamped). Judges often restate the rubric, so only the final
    occurrence counts. Unit-interval values are clamped to [0, 1]; binary values
    must be exactly 0 or 1.
    """
    if scale not in SCALES:
        raise ConfigurationError(f"unknown scale {scale!r}")
    marker = re.compile(re.escape(output_field) + r"\s*:", re.IGNORECASE)
    hits = list(marker.finditer(raw))
    if not hits:
        raise ParseError(f"field {output_field!r} absent from judge output")
    tail = raw[hits[-1].end():]
    m = re.match(r"\s*\[?\s*(" + _NUMBER + ")", tail)
    if m is None:
        raise ParseError(f"no number follows the last {output_field!r} marker")
    x = float(m.group(1))
    if scale == BINARY:
        if x not in (0.0, 1.0):
            raise ParseError(f"binary field {output_field!r} must be 0 or 1, got {x}")
        return int(x), False
    clamped = x < 0.0 or x > 1.0
    return min(max(x, 0.0), 1.0), clamped


@dataclass
class MetricScore:
    """One judged measurement, with the raw transcript kept for audit."""

    metric_name: str
    value: float | int | None
    judge_model: str
    raw_transcript: str
    parse_ok: bool
    clamped: bool = False
    detail: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if (self.value is not None) != self.parse_ok:
            raise ValueError("MetricScore value must be present exactly when parse_ok")

    def to_json(self) -> dict:
        return {
            "metric_name": self.metric_name,
            "value": self.value,
            "judge_model": self.judge_model,
            "raw_transcript": self.raw_transcript,
            "parse_ok": self.parse_ok,
            "clamped": self.clamped,
            "detail": self.detail,
        }

    @classmethod
    def from_json(cls, data: dict) -> "MetricScore":
        return cls(
            metric_name=data["metric_name"],
            value=data["value"],
            judge_model=data["judge_model"],
            raw_transcript=data["raw_transcript"],
            parse_ok=data["parse_ok"],
            clamped=data.get("clamped", False),
            detail=data.get("detail", {}),
        )


def _judge_chat(
    gateway: Gateway,
    endpoint: ModelEndpoint,
    prompt: str,
    *,
    seed: int | None = None,
    refresh: bool = False,
) -> tuple[str, object]:
    req = ChatRequest.build(endpoint, prompt, temperature=0.0, seed=seed, is_judge=True)
    return gateway.chat_complete(endpoint, req, refresh=refresh)


def score_with_program(
    gateway: Gateway,
    endpoint: ModelEndpoint,
    program: PromptProgram,
    inputs: dict[str, str],
    *,
    seed: int | None = None,
) -> MetricScore:
    """Render, call the judge at temperature 0, parse; one cache-bypassing retry on parse failure."""
    prompt = render_program(program, inputs)
    text, _ = _judge_chat(gateway, endpoint, prompt, seed=seed)
    retried = False
    try:
        value, clamped = parse_judge_output(text, program.output_field, program.scale)
    except ParseError:
        retried = True
        text, _ = _judge_chat(gateway, endpoint, prompt, seed=seed, refresh=True)
        try:
            value, clamped = parse_judge_output(text, program.output_field, program.scale)
        except ParseError:
            return MetricScore(
                metric_name=program.metric_name,
                value=None,
                judge_model=endpoint.model_name,
                raw_transcript=text,
                parse_ok=False,
                detail={"retried": True},
            )
    return MetricScore(
        metric_name=program.metric_name,
        value=value,
        judge_model=endpoint.model_name,
        raw_transcript=text,
        parse_ok=True,
        clamped=clamped,
        detail={"retried": retried} if retried else {},
    )


def score_answer_correctness(
    gateway: Gateway,
    endpoint: ModelEndpoint,
    generated: str,
    reference: str,
    *,
    program: PromptProgram | None = None,
    seed: int | None = None,
) -> MetricScore:
    """Judge how well a generated answer matches the reference, on [0, 1]."""
    if not generated.strip() or not reference.strip():
        raise ValueError("score_answer_correctness needs non-empty generated and reference texts")
    if program is None:
        program = load_program("answer_correctness")
    return score_with_program(
        gateway, endpoint, program, {"response": generated, "reference": reference}, seed=seed
    )


def score_answerability(
    gateway: Gateway,
    endpoint: ModelEndpoint,
    question: str,
    context: str,
    *,
    program: PromptProgram | None = None,
    seed: int | None = None,
) -> MetricScore:
    """Binary: does the context alone suffice to answer the question?"""
    if not question.strip() or not context.strip():
        raise ValueError("score_answerability needs non-empty question and context")
    if program is None:
        program = load_program("answerability")
    return score_with_program(
        gateway, endpoint, program, {"question": question, "context": context}, seed=seed
    )


_LINE_ITEM = re.compile(r"^\s*(\d+)[.)]\s*(.+?)\s*$")


def _parse_numbered(text: str, marker: str) -> list[str]:
    """Collect numbered list items after the last `marker` occurrence (whole text if absent)."""
    low = text.lower()
    pos = low.rfind(marker.lower())
    region = text[pos + len(marker):] if pos >= 0 else text
    items: list[str] = []
    for line in region.splitlines():
        m = _LINE_ITEM.match(line)
        if m:
            items.append(m.group(2))
    return items


_VERDICT_ITEM = re.compile(r"^\s*(\d+)[.)]\s*(supported|unsupported)\b", re.IGNORECASE)


def _parse_verdicts(text: str, total: int) -> dict[int, bool]:
    low = text.lower()
    pos = low.rfind("verdicts:")
    region = text[pos + len("verdicts:"):] if pos >= 0 else text
    verdicts: dict[int, bool] = {}
    for line in region.splitlines():
        m = _VERDICT_ITEM.match(line)
        if m:
            idx = int(m.group(1))
            if 1 <= idx <= total:
                verdicts[idx] = m.group(2).lower() == "supported"
    return verdicts


def score_faithfulness(
    gateway: Gateway,
    endpoint: ModelEndpoint,
    answer: str,
    contexts: list[str],
    *,
    seed: int | None = None,
) -> MetricScore:
    """Two-stage judge: decompose the answer into atomic statements, then verdict each.

    Score is supported / total. A statement whose verdict is missing from the
    judge reply counts as unsupported. Zero statements after one retry yields an
    unscored record.
    """
    if not answer.strip():
        raise ValueError("score_faithfulness needs a non-empty answer")
    decompose = load_template("faithfulness_decompose").format(answer=answer)
    text1, _ = _judge_chat(gateway, endpoint, decompose, seed=seed)
    statements = _parse_numbered(text1, "statements:")
    retried = False
    if not statements:
        retried = True
        text1, _ = _judge_chat(gateway, endpoint, decompose, seed=seed, refresh=True)
        statements = _parse_numbered(text1, "statements:")
    if not statements:
        return MetricScore(
            metric_name="faithfulness",
            value=None,
            judge_model=endpoint.model_name,
            raw_transcript=text1,
            parse_ok=False,
            detail={"stage": "decompose", "retried": True},
        )
    block = "\n".join(f"{i}. {s}" for i, s in enumerate(statements, start=1))
    verdict_prompt = load_template("faithfulness_verdict").format(
        context="\n\n".join(contexts), statements=block
    )
    text2, _ = _judge_chat(gateway, endpoint, verdict_prompt, seed=seed)
    verdicts = _parse_verdicts(text2, len(statements))
    supported = sum(1 for i in range(1, len(statements) + 1) if verdicts.get(i, False))
    detail = {
        "statements": statements,
        "supported": supported,
        "total": len(statements),
        "missing_verdicts": len(statements) - len(verdicts),
    }
    if retried:
        detail["retried"] = True
    return MetricScore(
        metric_name="faithfulness",
        value=supported / len(statements),
        judge_model=endpoint.model_name,
        raw_transcript=text1 + "\n---\n" + text2,
        parse_ok=True,
        detail=detail,
    )


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def score_answer_relevance(
    gateway: Gateway,
    chat_endpoint: ModelEndpoint,
    embed_endpoint: ModelEndpoint,
    answer: str,
    question: str,
    *,
    n: int = 3,
    seed: int | None = None,
) -> MetricScore:
    """Mean cosine between the original question and n judge-written questions for the answer.

    Each cosine is clamped to [0, 1] before averaging. Fewer than n generated
    questions are used as-is; zero yields an unscored record.
    """
    if not answer.strip() or not question.strip():
        raise ValueError("score_answer_relevance needs non-empty answer and question")
    if n < 1:
        raise ValueError("n must be >= 1")
    prompt = load_template("relevance_questions").format(n=n, answer=answer)
    text, _ = _judge_chat(gateway, chat_endpoint, prompt, seed=seed)
    generated = _parse_numbered(text, "questions:")[:n]
    if not generated:
        return MetricScore(
            metric_name="answer_relevance",
            value=None,
            judge_model=chat_endpoint.model_name,
            raw_transcript=text,
            parse_ok=False,
        )
    vectors = gateway.embed_texts([question] + generated, embed_endpoint)
    original = np.asarray(vectors[0], dtype=np.float64)
    cosines = [
        min(max(_cosine(original, np.asarray(v, dtype=np.float64)), 0.0), 1.0)
        for v in vectors[1:]
    ]
    return MetricScore(
        metric_name="answer_relevance",
        value=float(np.mean(cosines)),
        judge_model=chat_endpoint.model_name,
        raw_transcript=text,
        parse_ok=True,
        detail={"generated_questions": generated, "cosines": cosines},
    )
