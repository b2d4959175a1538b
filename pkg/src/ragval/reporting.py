"""Report emission: deterministic CSV, JSON, and markdown views over run artifacts."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import RagvalError
from .harness import FAILURE_CATEGORIES, NO_FAILURES

FORMATS = ("csv", "json", "markdown")

KINDS = ("eval_run", "retrieval", "ablation", "alignment", "failures", "qa_stats")


def write_artifact(path: str | Path, kind: str, payload: dict, meta: dict) -> Path:
    """Persist one run artifact with its provenance; reports are rendered from these."""
    if kind not in KINDS:
        raise RagvalError(f"unknown artifact kind: {kind!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"kind": kind, "payload": payload, "meta": meta}
    path.write_text(
        json.dumps(body, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    return path


def load_artifact(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise RagvalError(f"missing artifact: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict) or data.get("kind") not in KINDS:
        raise RagvalError(f"artifact {path} has no recognizable kind")
    return data


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in fieldnames})
    return path


def _csv_rows(kind: str, payload: dict) -> tuple[list[str], list[dict]]:
    if kind == "retrieval":
        fields = ["embedder_model", "k", "n_questions", "recall_at_k", "mrr_at_k", "near_miss_count"]
        return fields, [{f: payload.get(f) for f in fields}]
    if kind == "eval_run":
        fields = [
            "generator_model", "embedder_model", "judge_model", "k", "n_questions",
            "answer_correctness", "faithfulness", "answer_relevance", "recall_at_k", "mrr_at_k",
        ]
        row = {f: payload.get(f) for f in fields}
        row.update({m: payload["aggregates"].get(m) for m in (
            "answer_correctness", "faithfulness", "answer_relevance", "recall_at_k", "mrr_at_k")})
        return fields, [row]
    if kind == "ablation":
        fields = ["k", "answer_correctness", "faithfulness", "answer_relevance", "recall_at_k", "mrr_at_k"]
        return fields, list(payload["grid"])
    if kind == "alignment":
        fields = ["method", "model", "rho_s", "se", "n", "parse_failures", "valid"]
        row = {
            "method": payload.get("program_name") or payload.get("metric_name"),
            "model": payload.get("judge_model"),
            "rho_s": payload.get("rho_s"),
            "se": payload.get("se"),
            "n": payload.get("n"),
            "parse_failures": payload.get("parse_failures"),
            "valid": payload.get("valid"),
        }
        return fields, [row]
    if kind == "failures":
        fields = ["category", "count", "percentage"]
        rows = [
            {"category": c, "count": payload["counts"].get(c, 0),
             "percentage": payload["percentages"].get(c)}
            for c in list(FAILURE_CATEGORIES) + [NO_FAILURES]
        ]
        return fields, rows
    if kind == "qa_stats":
        fields = ["requested", "accepted", "attempts", "wall_seconds", "samples_per_minute"]
        return fields, [{f: payload.get(f) for f in fields}]
    raise RagvalError(f"no CSV shape for artifact kind {kind!r}")


def _markdown_section(name: str, kind: str, payload: dict, meta: dict) -> list[str]:
    lines = [f"## {name} ({kind})", ""]
    if kind == "alignment":
        lines += [
            "| Method | Model | rho_s |",
            "| --- | --- | --- |",
            "| {} | {} | {} |".format(
                payload.get("program_name") or payload.get("metric_name"),
                payload.get("judge_model"),
                _fmt(payload.get("rho_s")),
            ),
            "",
            f"SE {_fmt(payload.get('se'))} over n={payload.get('n')} "
            f"({payload.get('parse_failures')} parse failures; valid={payload.get('valid')}).",
        ]
        for note in payload.get("notes", []):
            lines.append(f"- {note}")
    elif kind == "eval_run":
        agg = payload["aggregates"]
        lines += [
            "| Metric | Value |",
            "| --- | --- |",
        ]
        for metric in ("answer_correctness", "faithfulness", "answer_relevance", "recall_at_k", "mrr_at_k"):
            lines.append(f"| {metric} | {_fmt(agg.get(metric))} |")
        lines += [
            "",
            f"{payload['n_questions']} questions at k={payload['k']}; unscored: "
            + ", ".join(f"{k}={v}" for k, v in sorted(payload["unscored"].items()))
            + f"; near-miss retrievals: {payload['near_miss_count']}.",
        ]
    elif kind == "retrieval":
        lines += [
            "| Embedder | k | Recall@k | MRR@k |",
            "| --- | --- | --- | --- |",
            "| {} | {} | {} | {} |".format(
                payload.get("embedder_model"), payload.get("k"),
                _fmt(payload.get("recall_at_k")), _fmt(payload.get("mrr_at_k")),
            ),
            "",
            f"{payload.get('n_questions')} questions; "
            f"near-miss retrievals: {payload.get('near_miss_count')}.",
        ]
    elif kind == "ablation":
        lines += [
            "| k | Answer Correctness | Faithfulness | Answer Relevance | Recall@k | MRR@k |",
            "| --- | --- | --- | --- | --- | --- |",
        ]
        for row in payload["grid"]:
            lines.append(
                "| {} | {} | {} | {} | {} | {} |".format(
                    row["k"], _fmt(row["answer_correctness"]), _fmt(row["faithfulness"]),
                    _fmt(row["answer_relevance"]), _fmt(row["recall_at_k"]), _fmt(row["mrr_at_k"]),
                )
            )
    elif kind == "failures":
        lines += [
            "| Category | Count | % of scored QAs |",
            "| --- | --- | --- |",
        ]
        for category in list(FAILURE_CATEGORIES) + [NO_FAILURES]:
            lines.append(
                "| {} | {} | {} |".format(
                    category, payload["counts"].get(category, 0),
                    _fmt(payload["percentages"].get(category)),
                )
            )
        lines += [
            "",
            f"{payload['judge_failures']} taxonomy judge failures excluded; "
            f"{payload['unscored']} questions had no correctness score.",
        ]
    elif kind == "qa_stats":
        lines += [
            "| Requested | Accepted | Attempts | Samples/min |",
            "| --- | --- | --- | --- |",
            "| {} | {} | {} | {} |".format(
                payload.get("requested"), payload.get("accepted"),
                payload.get("attempts"), _fmt(payload.get("samples_per_minute")),
            ),
            "",
            "Rejections: "
            + ", ".join(f"{k}={v}" for k, v in sorted(payload.get("rejected_by_metric", {}).items()))
            + ".",
        ]
    lines += ["", "### Provenance", ""]
    for key in ("config_digest", "seed", "models", "cache_stats"):
        if key in meta:
            lines.append(f"- {key}: {json.dumps(meta[key], sort_keys=True)}")
    lines.append("")
    return lines


def emit_report(
    artifact_paths: list[str | Path], out_dir: str | Path, fmt: str
) -> list[Path]:
    """Render artifacts into the requested format; byte-idempotent over unchanged inputs."""
    if fmt not in FORMATS:
        raise RagvalError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
    if not artifact_paths:
        raise RagvalError("emit_report needs at least one artifact")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loaded = [(Path(p), load_artifact(p)) for p in artifact_paths]

    written: list[Path] = []
    if fmt == "csv":
        for path, artifact in loaded:
            fields, rows = _csv_rows(artifact["kind"], artifact["payload"])
            written.append(_write_csv(out_dir / f"{path.stem}.csv", fields, rows))
    elif fmt == "json":
        body = {
            "artifacts": [
                {"source": path.name, **artifact} for path, artifact in loaded
            ]
        }
        target = out_dir / "report.json"
        target.write_text(
            json.dumps(body, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        written.append(target)
    else:
        lines = ["# Evaluation report", ""]
        for path, artifact in loaded:
            lines += _markdown_section(
                path.stem, artifact["kind"], artifact["payload"], artifact.get("meta", {})
            )
        target = out_dir / "report.md"
        target.write_text("\n".join(lines).rstrip() + "\n", encoding="utf-8")
        written.append(target)
    return written
