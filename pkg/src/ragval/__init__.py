"""Synthetic QA generation and human-aligned RAG evaluation toolkit."""

from .alignment import (
    AlignmentReport,
    LabeledExample,
    bonett_wright_se,
    load_squad2,
    load_stsb,
    spearman_rho,
    validate_metric_alignment,
)
from .config import RunConfig, config_digest, derive_seed
from .errors import (
    ConfigurationError,
    CorpusError,
    EvaluationInvalidError,
    ParseError,
    PipelineError,
    ProtocolError,
    RagvalError,
    TransportError,
    ZeroVarianceError,
)
from .gateway import (
    CHAT,
    EMBEDDING,
    ChatRequest,
    Gateway,
    MockRule,
    MockScript,
    ModelEndpoint,
    TranscriptRecord,
    hash_embedding,
)
from .harness import (
    FAILURE_CATEGORIES,
    EvalRunResult,
    FailureAnalysis,
    FailureLabel,
    RagConfig,
    ablate_chunk_count,
    ablation_grid,
    analyze_failures,
    answer_with_rag,
    build_corpus_index,
    evaluate_retrieval,
    evaluate_run,
    parse_failure_labels,
    self_bias_matrix,
)
from .index import RetrievalResult, VectorIndex, build_index, dump_index, load_index, query_top_k
from .ingest import (
    Chunk,
    ChunkingConfig,
    Corpus,
    Document,
    TokenSpan,
    chunk_document,
    count_tokens,
    load_corpus,
    read_chunk_manifest,
    tokenize_builtin,
    write_chunk_manifest,
)
from .judges import (
    MetricScore,
    PromptProgram,
    load_program,
    load_template,
    parse_judge_output,
    program_digest,
    render_program,
    save_program,
    score_answer_correctness,
    score_answer_relevance,
    score_answerability,
    score_faithfulness,
    score_with_program,
)
from .optimize import (
    OptimizationTrace,
    copro_optimize,
    evaluate_program,
    labeled_few_shot,
    mipro_lite,
    save_trace,
)
from .qagen import (
    FilterThresholds,
    GenerationConfig,
    GenerationStats,
    QARecord,
    ValidationResult,
    generate_answer,
    generate_dataset,
    generate_question,
    read_qa_dataset,
    sample_contexts,
    validate_candidate,
    write_qa_dataset,
)
from .reporting import emit_report, load_artifact, write_artifact
from .retrieval import RetrievalOutcome, mrr_at_k, outcome_from_result, rank_of_truth, recall_at_k

__version__ = "0.1.0"
