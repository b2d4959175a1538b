"""Closed-form retrieval scoring: ground-truth rank lookup, Recall@K, MRR@K.

MRR@K follows the top-K cutoff convention: a ground-truth chunk ranked
outside the window (or never retrieved) contributes 0 to the mean, which
makes mrr_at_k <= recall_at_k on every outcome set.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import RagvalError
from .index import RetrievalResult


@dataclass(frozen=True)
class RetrievalOutcome:
    query_id: str
    truth_chunk_id: str
    rank: int | None  # 1-based; None when the truth chunk was not retrieved
    k: int  # retrieval depth used to produce this outcome

    def __post_init__(self) -> None:
        if self.rank is not None and self.rank < 1:
            raise RagvalError("rank must be a positive integer or None")


def rank_of_truth(result: RetrievalResult, truth_chunk_id: str) -> int | None:
    """1-based position of the truth chunk in the ranked list, or None."""
    for position, (chunk_id, _score) in enumerate(result.ranked, start=1):
        if chunk_id == truth_chunk_id:
            return position
    return None


def outcome_from_result(result: RetrievalResult, truth_chunk_id: str) -> RetrievalOutcome:
    return RetrievalOutcome(
        query_id=result.query_id,
        truth_chunk_id=truth_chunk_id,
        rank=rank_of_truth(result, truth_chunk_id),
        k=result.k,
    )


def _check_depth(outcomes: list[RetrievalOutcome], k: int) -> None:
    if not outcomes:
        raise RagvalError("no retrieval outcomes to aggregate")
    if k < 1:
        raise RagvalError("k must be >= 1")
    shallow = [o.query_id for o in outcomes if o.k < k]
    if shallow:
        raise RagvalError(
            f"retrieval depth below k={k} for queries: {shallow[:5]}"
        )


def recall_at_k(outcomes: list[RetrievalOutcome], k: int) -> float:
    """Fraction of queries whose truth chunk ranks within the top k."""
    _check_depth(outcomes, k)
    hits = sum(1 for o in outcomes if o.rank is not None and o.rank <= k)
    return hits / len(outcomes)


def mrr_at_k(outcomes: list[RetrievalOutcome], k: int) -> float:
    """Mean reciprocal rank, zero for ranks absent or beyond k."""
    _check_depth(outcomes, k)
    total = sum(1.0 / o.rank for o in outcomes if o.rank is not None and o.rank <= k)
    return total / len(outcomes)
