"""In-memory dense index with exact top-K cosine retrieval.

Corpora here are small (hundreds to low thousands of chunks), so search is a
single matrix-vector product followed by a full sort. Ties are broken by
ascending chunk_id to keep rankings reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import RagvalError


@dataclass
class RetrievalResult:
    query_id: str
    ranked: list[tuple[str, float]]  # (chunk_id, cosine score), non-increasing
    k: int


class VectorIndex:
    def __init__(self, chunk_ids: list[str], matrix: np.ndarray, norms: np.ndarray):
        self.chunk_ids = chunk_ids
        self.matrix = matrix
        self.norms = norms

    def __len__(self) -> int:
        return len(self.chunk_ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def build_index(chunk_ids: list[str], embeddings: list[list[float]] | np.ndarray) -> VectorIndex:
    if len(chunk_ids) != len(embeddings):
        raise RagvalError(
            f"chunk/embedding count mismatch: {len(chunk_ids)} chunks, {len(embeddings)} vectors"
        )
    if len(chunk_ids) == 0:
        raise RagvalError("cannot build an empty index")
    if len(set(chunk_ids)) != len(chunk_ids):
        raise RagvalError("duplicate chunk ids in index")
    matrix = np.asarray(embeddings, dtype=np.float64)
    if matrix.ndim != 2:
        raise RagvalError("embeddings must share a uniform dimension")
    norms = np.linalg.norm(matrix, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise RagvalError(f"zero-norm embedding for chunk {chunk_ids[int(zero[0])]!r}")
    return VectorIndex(list(chunk_ids), matrix, norms)


def query_top_k(index: VectorIndex, query: list[float] | np.ndarray, k: int, query_id: str = "") -> RetrievalResult:
    """Exact cosine top-k. Ties broken by ascending chunk_id."""
    if k < 1:
        raise RagvalError("k must be >= 1")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise RagvalError(f"query dimension {q.shape[0]} != index dimension {index.dim}")
    qnorm = float(np.linalg.norm(q))
    if qnorm == 0.0:
        raise RagvalError("zero query vector")
    scores = (index.matrix @ q) / (index.norms * qnorm)
    order = sorted(range(len(index.chunk_ids)), key=lambda i: (-scores[i], index.chunk_ids[i]))
    top = order[: min(k, len(order))]
    return RetrievalResult(
        query_id=query_id,
        ranked=[(index.chunk_ids[i], float(scores[i])) for i in top],
        k=k,
    )


def dump_index(index: VectorIndex, path: str | Path) -> None:
    """Persist as JSON Lines of {chunk_id, vector, norm}."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, chunk_id in enumerate(index.chunk_ids):
            fh.write(
                json.dumps(
                    {
                        "chunk_id": chunk_id,
                        "vector": [float(x) for x in index.matrix[i]],
                        "norm": float(index.norms[i]),
                    },
                    sort_keys=True,
                )
            )
            fh.write("\n")


def load_index(path: str | Path) -> VectorIndex:
    chunk_ids: list[str] = []
    vectors: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            chunk_ids.append(obj["chunk_id"])
            vectors.append(obj["vector"])
    return build_index(chunk_ids, vectors)
