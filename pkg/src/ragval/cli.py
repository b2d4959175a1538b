"""Command-line front door: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .alignment import load_squad2, load_stsb, validate_metric_alignment
from .config import RunConfig, derive_seed
from .errors import ConfigurationError, RagvalError
from .gateway import Gateway
from .harness import (
    EvalRunResult,
    RagConfig,
    ablate_chunk_count,
    ablation_grid,
    analyze_failures,
    evaluate_retrieval,
    evaluate_run,
)
from .ingest import Corpus, load_corpus, read_chunk_manifest, write_chunk_manifest
from .judges import load_program, save_program
from .optimize import copro_optimize, labeled_few_shot, mipro_lite, save_trace
from .qagen import (
    FilterThresholds,
    GenerationConfig,
    generate_dataset,
    read_qa_dataset,
    write_qa_dataset,
)
from .reporting import emit_report, load_artifact, write_artifact


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig.from_dict({})
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "cache_dir", None):
        cfg.cache_dir = args.cache_dir
    if getattr(args, "output_dir", None):
        cfg.output_dir = args.output_dir
    if getattr(args, "k", None) is not None:
        cfg.k_retrieve = args.k
        if cfg.k_retrieve < 1:
            raise ConfigurationError("k must be >= 1")
    return cfg


def _gateway(cfg: RunConfig) -> Gateway:
    return Gateway(cache_dir=cfg.cache_dir)


def _meta(cfg: RunConfig, gateway: Gateway, models: dict) -> dict:
    return {
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "models": models,
        "cache_stats": gateway.cache_stats(),
    }


def _corpus(cfg: RunConfig, args) -> Corpus:
    manifest = getattr(args, "manifest", None)
    if manifest:
        chunks = read_chunk_manifest(manifest)
        return Corpus(documents=[], chunks=chunks, config=cfg.chunking)
    paths = list(getattr(args, "paths", None) or cfg.corpus_paths)
    if not paths:
        raise ConfigurationError("no corpus paths: pass --paths or set corpus.paths in the config")
    return load_corpus(paths, cfg.chunking)


def _out_path(cfg: RunConfig, name: str, override: str | None) -> Path:
    if override:
        return Path(override)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _rag_config(cfg: RunConfig) -> RagConfig:
    generation = cfg.generation
    return RagConfig(
        embedder=cfg.endpoint("embedder"),
        generator=cfg.endpoint("generator"),
        judge=cfg.endpoint("judge"),
        k_retrieve=cfg.k_retrieve,
        relevance_n=generation.get("relevance_n", 3),
    )


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    corpus = _corpus(cfg, args)
    out = _out_path(cfg, "chunks.jsonl", args.out)
    write_chunk_manifest(corpus.chunks, out)
    print(
        f"ingested {len(corpus.documents)} documents into {len(corpus.chunks)} chunks -> {out}"
    )
    for err in corpus.file_errors:
        print(f"skipped {err['path']}: {err['error']}", file=sys.stderr)
    return 0


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    corpus = _corpus(cfg, args)
    gateway = _gateway(cfg)
    thresholds = FilterThresholds(
        answerability_min=cfg.thresholds.get("answerability_min", 1),
        faithfulness_min=cfg.thresholds.get("faithfulness_min", 0.8),
        relevance_min=cfg.thresholds.get("relevance_min", 0.8),
    )
    gen_cfg = GenerationConfig(
        generator=cfg.endpoint("generator"),
        judge=cfg.endpoint("judge"),
        embedder=cfg.endpoint("embedder"),
        thresholds=thresholds,
        user_persona=cfg.generation.get("user_persona", "a reader studying the material"),
        sme_persona=cfg.generation.get("sme_persona", "an experienced practitioner of the material"),
        temperature=cfg.generation.get("temperature", 0.7),
        attempt_budget_factor=cfg.generation.get("attempt_budget_factor", 10),
        relevance_n=cfg.generation.get("relevance_n", 3),
    )
    records, stats = generate_dataset(gateway, corpus, args.n, gen_cfg, cfg.seed)
    dataset_path = _out_path(cfg, "dataset.jsonl", args.out)
    write_qa_dataset(records, dataset_path)
    models = {"generator": gen_cfg.generator.model_name, "judge": gen_cfg.judge.model_name}
    write_artifact(
        _out_path(cfg, "qa_stats.json", None),
        "qa_stats",
        stats.to_json(),
        _meta(cfg, gateway, models),
    )
    print(
        f"accepted {stats.accepted}/{stats.requested} in {stats.attempts} attempts -> {dataset_path}"
    )
    return 0


def cmd_eval_retrieval(args) -> int:
    cfg = _load_config(args)
    corpus = _corpus(cfg, args)
    gateway = _gateway(cfg)
    dataset = read_qa_dataset(args.dataset)
    rag_cfg = _rag_config(cfg)
    payload = evaluate_retrieval(gateway, dataset, corpus, rag_cfg)
    out = write_artifact(
        _out_path(cfg, "retrieval.json", args.out),
        "retrieval",
        payload,
        _meta(cfg, gateway, {"embedder": rag_cfg.embedder.model_name}),
    )
    print(
        f"recall@{payload['k']}={payload['recall_at_k']:.4f} "
        f"mrr@{payload['k']}={payload['mrr_at_k']:.4f} -> {out}"
    )
    return 0


def cmd_eval_rag(args) -> int:
    cfg = _load_config(args)
    corpus = _corpus(cfg, args)
    gateway = _gateway(cfg)
    dataset = read_qa_dataset(args.dataset)
    rag_cfg = _rag_config(cfg)
    result = evaluate_run(gateway, dataset, corpus, rag_cfg, seed=derive_seed(cfg.seed, "eval-rag"))
    models = {
        "embedder": rag_cfg.embedder.model_name,
        "generator": rag_cfg.generator.model_name,
        "judge": rag_cfg.judge.model_name,
    }
    out = write_artifact(
        _out_path(cfg, "eval_run.json", args.out),
        "eval_run",
        result.to_json(),
        _meta(cfg, gateway, models),
    )
    print(f"evaluated {result.n_questions} questions at k={result.k} -> {out}")
    return 0


def cmd_ablate_chunks(args) -> int:
    cfg = _load_config(args)
    corpus = _corpus(cfg, args)
    gateway = _gateway(cfg)
    dataset = read_qa_dataset(args.dataset)
    rag_cfg = _rag_config(cfg)
    k_values = cfg.k_values
    if args.k_values:
        k_values = tuple(int(v) for v in args.k_values.split(","))
    results = ablate_chunk_count(
        gateway, dataset, corpus, rag_cfg, k_values, seed=derive_seed(cfg.seed, "ablate")
    )
    payload = {
        "grid": ablation_grid(results),
        "runs": {str(k): r.to_json() for k, r in sorted(results.items())},
    }
    models = {
        "embedder": rag_cfg.embedder.model_name,
        "generator": rag_cfg.generator.model_name,
        "judge": rag_cfg.judge.model_name,
    }
    out = write_artifact(
        _out_path(cfg, "ablation.json", args.out), "ablation", payload, _meta(cfg, gateway, models)
    )
    print(f"swept k={list(k_values)} -> {out}")
    return 0


_METRIC_PROGRAMS = {
    "answer-correctness": ("answer_correctness", load_stsb),
    "answerability": ("answerability", load_squad2),
}


def cmd_validate_metric(args) -> int:
    cfg = _load_config(args)
    if args.metric not in _METRIC_PROGRAMS:
        raise ConfigurationError(
            f"unknown metric {args.metric!r}; expected one of {sorted(_METRIC_PROGRAMS)}"
        )
    default_program, loader = _METRIC_PROGRAMS[args.metric]
    program = load_program(args.program or default_program)
    examples = loader(args.benchmark, args.n, derive_seed(cfg.seed, "alignment:sample"))
    gateway = _gateway(cfg)
    judge = cfg.endpoint("judge")
    report = validate_metric_alignment(gateway, program, examples, judge)
    out = write_artifact(
        _out_path(cfg, "alignment.json", args.out),
        "alignment",
        report.to_json(),
        _meta(cfg, gateway, {"judge": judge.model_name}),
    )
    print(report.markdown_row())
    print(f"alignment report -> {out}")
    return 0


def cmd_optimize_prompt(args) -> int:
    cfg = _load_config(args)
    if args.metric not in _METRIC_PROGRAMS:
        raise ConfigurationError(
            f"unknown metric {args.metric!r}; expected one of {sorted(_METRIC_PROGRAMS)}"
        )
    default_program, loader = _METRIC_PROGRAMS[args.metric]
    program = load_program(args.program or default_program)
    total = args.train_n + args.val_n
    examples = loader(args.benchmark, total, derive_seed(cfg.seed, "optimize:sample"))
    train, val = examples[: args.train_n], examples[args.train_n :]
    gateway = _gateway(cfg)
    judge = cfg.endpoint("judge")
    opts = cfg.optimizer
    if args.optimizer == "labeled-few-shot":
        k = opts.get("few_shot_k", 8)
        best = labeled_few_shot(program, train, k, derive_seed(cfg.seed, "fewshot"))
        trace = None
    elif args.optimizer == "copro":
        proposer = cfg.endpoint("proposer")
        trace = copro_optimize(
            gateway, program, train, val, judge, proposer,
            breadth=opts.get("breadth", 4), depth=opts.get("depth", 3),
            seed=derive_seed(cfg.seed, "copro"),
            proposer_temperature=opts.get("proposer_temperature", 0.9),
        )
        best = trace.best_program
    elif args.optimizer == "mipro":
        proposer = cfg.endpoint("proposer")
        trace = mipro_lite(
            gateway, program, train, val, judge, proposer,
            trials=opts.get("trials", 20),
            seed=derive_seed(cfg.seed, "mipro"),
            proposer_temperature=opts.get("proposer_temperature", 0.9),
        )
        best = trace.best_program
    else:
        raise ConfigurationError(f"unknown optimizer {args.optimizer!r}")
    program_path = _out_path(cfg, "optimized_program.json", args.out)
    save_program(best, program_path)
    if trace is not None:
        trace_path = program_path.with_name(program_path.stem + "_trace.json")
        save_trace(trace, trace_path)
        print(
            f"best train score {trace.best_score}, val score {trace.val_score} -> {program_path}"
        )
    else:
        print(f"few-shot program with {len(best.demos)} demos -> {program_path}")
    return 0


def cmd_analyze_failures(args) -> int:
    cfg = _load_config(args)
    gateway = _gateway(cfg)
    run_artifact = json.loads(Path(args.run).read_text(encoding="utf-8"))
    if run_artifact.get("kind") != "eval_run":
        raise ConfigurationError(f"{args.run} is not an eval_run artifact")
    run = EvalRunResult.from_json(run_artifact["payload"])
    judge = cfg.endpoint("judge")
    analysis = analyze_failures(
        gateway, run, judge, threshold=args.threshold, seed=derive_seed(cfg.seed, "failures")
    )
    out = write_artifact(
        _out_path(cfg, "failures.json", args.out),
        "failures",
        analysis.to_json(),
        _meta(cfg, gateway, {"judge": judge.model_name}),
    )
    print(
        f"labeled {len(analysis.labels)} low-scoring questions "
        f"({analysis.judge_failures} judge failures) -> {out}"
    )
    return 0


def cmd_report(args) -> int:
    cfg = _load_config(args)
    paths = []
    for entry in args.artifacts:
        p = Path(entry)
        if p.is_dir():
            # Output dirs also hold non-artifact JSON (datasets, saved
            # programs); directory expansion keeps only real artifacts.
            for candidate in sorted(p.glob("*.json")):
                try:
                    load_artifact(candidate)
                except RagvalError:
                    print(f"skipping {candidate}: not a run artifact", file=sys.stderr)
                    continue
                paths.append(candidate)
        else:
            paths.append(p)
    written = emit_report(paths, args.out or cfg.output_dir, args.format)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragval",
        description="Synthetic QA generation and human-aligned RAG evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, corpus: bool = False) -> None:
        p.add_argument("--config", help="path to a JSON run config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--cache-dir", dest="cache_dir", help="override the response cache dir")
        p.add_argument("--output-dir", dest="output_dir", help="override the output dir")
        p.add_argument("--out", help="explicit output file path")
        if corpus:
            p.add_argument("--paths", nargs="+", help="corpus files or directories")
            p.add_argument("--manifest", help="reuse a chunk manifest instead of re-ingesting")

    p = sub.add_parser("ingest", help="chunk a corpus into a manifest")
    common(p, corpus=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("generate", help="generate a filtered QA dataset")
    common(p, corpus=True)
    p.add_argument("--n", type=int, required=True, help="target accepted QA count")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval-retrieval", help="score retrieval ranks only")
    common(p, corpus=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("eval-rag", help="full RAG evaluation over a dataset")
    common(p, corpus=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_eval_rag)

    p = sub.add_parser("ablate-chunks", help="sweep the retrieved-chunk count")
    common(p, corpus=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--k-values", dest="k_values", help="comma-separated k values")
    p.set_defaults(func=cmd_ablate_chunks)

    p = sub.add_parser("validate-metric", help="align a judge metric against a human benchmark")
    common(p)
    p.add_argument("--metric", required=True, choices=sorted(_METRIC_PROGRAMS))
    p.add_argument("--benchmark", required=True, help="benchmark file path")
    p.add_argument("--n", type=int, default=500, help="sample size")
    p.add_argument("--program", help="program short name or JSON path")
    p.set_defaults(func=cmd_validate_metric)

    p = sub.add_parser("optimize-prompt", help="optimize a judge program on a benchmark")
    common(p)
    p.add_argument("--metric", required=True, choices=sorted(_METRIC_PROGRAMS))
    p.add_argument("--benchmark", required=True)
    p.add_argument(
        "--optimizer", required=True, choices=["labeled-few-shot", "copro", "mipro"]
    )
    p.add_argument("--train-n", dest="train_n", type=int, default=500)
    p.add_argument("--val-n", dest="val_n", type=int, default=500)
    p.add_argument("--program", help="starting program (default: shipped for the metric)")
    p.set_defaults(func=cmd_optimize_prompt)

    p = sub.add_parser("analyze-failures", help="label low-correctness answers")
    common(p)
    p.add_argument("--run", required=True, help="eval_run artifact path")
    p.add_argument("--threshold", type=float, default=1.0)
    p.set_defaults(func=cmd_analyze_failures)

    p = sub.add_parser("report", help="render artifacts to csv/json/markdown")
    common(p)
    p.add_argument("--artifacts", nargs="+", required=True, help="artifact files or directories")
    p.add_argument("--format", default="markdown", choices=["csv", "json", "markdown"])
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RagvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
