"""Corpus ingestion: load documents and split them into overlapping token windows.

Tokenization is deliberately deterministic so chunk boundaries are reproducible
across machines and model providers. The builtin tokenizer splits on whitespace
runs and emits every punctuation character (Unicode category P*) as its own
token; an external tokenizer command can be plugged in instead.
"""

from __future__ import annotations

import json
import logging
import re
import shlex
import subprocess
import unicodedata
import zlib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError, CorpusError

log = logging.getLogger(__name__)

BUILTIN_TOKENIZER = "builtin-deterministic"
EXTERNAL_TOKENIZER = "external-command"


@dataclass(frozen=True)
class TokenSpan:
    """One token with its [start, end) character offsets in the source text."""

    text: str
    start: int
    end: int


@dataclass(frozen=True)
class ChunkingConfig:
    max_chunk_tokens: int = 800
    overlap_tokens: int = 400
    tokenizer_spec: str = BUILTIN_TOKENIZER
    tokenizer_command: str | None = None

    def __post_init__(self) -> None:
        if self.max_chunk_tokens <= 0:
            raise ConfigurationError("max_chunk_tokens must be positive")
        if self.overlap_tokens < 0:
            raise ConfigurationError("overlap_tokens must be non-negative")
        if self.overlap_tokens >= self.max_chunk_tokens:
            raise ConfigurationError("overlap_tokens must be smaller than max_chunk_tokens")
        if self.tokenizer_spec not in (BUILTIN_TOKENIZER, EXTERNAL_TOKENIZER):
            raise ConfigurationError(f"unknown tokenizer_spec: {self.tokenizer_spec!r}")
        if self.tokenizer_spec == EXTERNAL_TOKENIZER and not self.tokenizer_command:
            raise ConfigurationError("external-command tokenizer requires tokenizer_command")

    @property
    def stride(self) -> int:
        return self.max_chunk_tokens - self.overlap_tokens


@dataclass
class Document:
    doc_id: str
    source_path: str
    text: str
    token_count: int
    warnings: list[str] = field(default_factory=list)


@dataclass
class Chunk:
    chunk_id: str
    doc_id: str
    token_span: tuple[int, int]
    char_span: tuple[int, int]
    text: str

    def to_json(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "token_span": list(self.token_span),
            "char_span": list(self.char_span),
            "text": self.text,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Chunk":
        return cls(
            chunk_id=obj["chunk_id"],
            doc_id=obj["doc_id"],
            token_span=(obj["token_span"][0], obj["token_span"][1]),
            char_span=(obj["char_span"][0], obj["char_span"][1]),
            text=obj["text"],
        )


@dataclass
class Corpus:
    documents: list[Document]
    chunks: list[Chunk]
    config: ChunkingConfig
    file_errors: list[dict] = field(default_factory=list)

    def chunk_by_id(self, chunk_id: str) -> Chunk:
        if not hasattr(self, "_by_id"):
            self._by_id = {c.chunk_id: c for c in self.chunks}
        return self._by_id[chunk_id]

    def __contains__(self, chunk_id: str) -> bool:
        try:
            self.chunk_by_id(chunk_id)
            return True
        except KeyError:
            return False


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize_builtin(text: str) -> list[TokenSpan]:
    """Deterministic tokenizer: whitespace-delimited runs, punctuation chars split out."""
    tokens: list[TokenSpan] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if _is_punct(ch):
            tokens.append(TokenSpan(ch, i, i + 1))
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace() and not _is_punct(text[j]):
            j += 1
        tokens.append(TokenSpan(text[i:j], i, j))
        i = j
    return tokens


def tokenize_external(text: str, command: str) -> list[TokenSpan]:
    """Run an external tokenizer command.

    Protocol: the command reads UTF-8 text on stdin and writes one line per
    token: "<char_start>\\t<char_end>".
    """
    try:
        proc = subprocess.run(
            shlex.split(command),
            input=text.encode("utf-8"),
            capture_output=True,
            timeout=120,
        )
    except (FileNotFoundError, OSError) as exc:
        raise ConfigurationError(f"external tokenizer unavailable: {command!r} ({exc})") from exc
    if proc.returncode != 0:
        raise ConfigurationError(
            f"external tokenizer failed (exit {proc.returncode}): {proc.stderr.decode('utf-8', 'replace')[:200]}"
        )
    tokens: list[TokenSpan] = []
    for line in proc.stdout.decode("utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            start_s, end_s = line.split("\t")
            start, end = int(start_s), int(end_s)
        except ValueError as exc:
            raise ConfigurationError(f"external tokenizer emitted bad line: {line!r}") from exc
        if not (0 <= start < end <= len(text)):
            raise ConfigurationError(f"external tokenizer span out of bounds: {line!r}")
        tokens.append(TokenSpan(text[start:end], start, end))
    return tokens


def tokenize(text: str, cfg: ChunkingConfig) -> list[TokenSpan]:
    if cfg.tokenizer_spec == EXTERNAL_TOKENIZER:
        return tokenize_external(text, cfg.tokenizer_command or "")
    return tokenize_builtin(text)


def count_tokens(text: str, cfg: ChunkingConfig | None = None) -> int:
    return len(tokenize(text, cfg or ChunkingConfig()))


def chunk_document(doc: Document, cfg: ChunkingConfig, tokens: list[TokenSpan] | None = None) -> list[Chunk]:
    """Slice a document into sliding token windows.

    Windows start at offsets 0, stride, 2*stride, ... and stop with the first
    window that reaches the end of the token sequence, so the tail is never
    emitted twice. A document shorter than one window yields a single chunk.
    """
    if tokens is None:
        tokens = tokenize(doc.text, cfg)
    n = len(tokens)
    if n == 0:
        return []
    chunks: list[Chunk] = []
    start = 0
    while True:
        end = min(start + cfg.max_chunk_tokens, n)
        char_start = tokens[start].start
        char_end = tokens[end - 1].end
        chunks.append(
            Chunk(
                chunk_id=f"{doc.doc_id}:{start}",
                doc_id=doc.doc_id,
                token_span=(start, end),
                char_span=(char_start, char_end),
                text=doc.text[char_start:char_end],
            )
        )
        if start + cfg.max_chunk_tokens >= n:
            break
        start += cfg.stride
    return chunks


# --- document loading -------------------------------------------------------

_PDF_TEXT_RE = re.compile(rb"\((?:\\.|[^\\()])*\)\s*Tj|\[(?:[^\]\\]|\\.)*\]\s*TJ")
_PDF_STRING_RE = re.compile(rb"\((?:\\.|[^\\()])*\)")
_PDF_ESCAPES = {b"n": b"\n", b"r": b"\r", b"t": b"\t", b"b": b"\b", b"f": b"\f",
                b"(": b"(", b")": b")", b"\\": b"\\"}


def _pdf_unescape(raw: bytes) -> bytes:
    out = bytearray()
    i = 0
    while i < len(raw):
        ch = raw[i:i + 1]
        if ch == b"\\" and i + 1 < len(raw):
            nxt = raw[i + 1:i + 2]
            if nxt in _PDF_ESCAPES:
                out += _PDF_ESCAPES[nxt]
                i += 2
                continue
            if nxt.isdigit():  # octal escape, up to 3 digits
                j = i + 1
                while j < min(i + 4, len(raw)) and raw[j:j + 1].isdigit():
                    j += 1
                out.append(int(raw[i + 1:j], 8) & 0xFF)
                i = j
                continue
            i += 1
            continue
        out += ch
        i += 1
    return bytes(out)


def extract_pdf_text(data: bytes) -> str:
    """Best-effort text extraction from simple PDFs.

    Decompresses Flate streams and pulls the literal strings out of Tj/TJ
    text-showing operators. Layout is flattened to lines; anything fancier
    (CID fonts, octal-heavy encodings) should be pre-extracted upstream.
    """
    pieces: list[str] = []
    for m in re.finditer(rb"stream\r?\n(.*?)endstream", data, re.DOTALL):
        blob = m.group(1)
        for candidate in (blob, None):
            if candidate is None:
                try:
                    candidate = zlib.decompress(blob)
                except zlib.error:
                    break
            line_parts: list[str] = []
            for op in _PDF_TEXT_RE.finditer(candidate):
                for s in _PDF_STRING_RE.finditer(op.group(0)):
                    text = _pdf_unescape(s.group(0)[1:-1]).decode("latin-1")
                    if text.strip():
                        line_parts.append(text)
            if line_parts:
                pieces.append(" ".join(line_parts))
                break
    return "\n".join(pieces)


def _normalize_text(text: str) -> str:
    return text.lstrip("﻿").replace("\r\n", "\n").replace("\r", "\n")


def _read_document_text(path: Path) -> tuple[str, list[str]]:
    warnings: list[str] = []
    data = path.read_bytes()
    if path.suffix.lower() == ".pdf" or data[:5] == b"%PDF-":
        text = extract_pdf_text(data)
        warnings.append("pdf-text-extraction: layout flattened to lines")
        if not text.strip():
            raise CorpusError(f"no text extracted from PDF {path}")
        return _normalize_text(text), warnings
    return _normalize_text(data.decode("utf-8")), warnings


def _doc_ids_for(paths: list[Path]) -> list[str]:
    ids: list[str] = []
    seen: dict[str, int] = {}
    for p in paths:
        base = p.stem or p.name
        n = seen.get(base, 0)
        seen[base] = n + 1
        ids.append(base if n == 0 else f"{base}-{n + 1}")
    return ids


def _expand_paths(paths: list[str | Path]) -> list[Path]:
    expanded: list[Path] = []
    for entry in paths:
        path = Path(entry)
        if path.is_dir():
            expanded.extend(p for p in path.rglob("*") if p.is_file())
        else:
            expanded.append(path)
    return sorted(expanded)


def load_corpus(paths: list[str | Path], cfg: ChunkingConfig) -> Corpus:
    """Load and chunk a set of files; directories are walked recursively.

    Files are processed in sorted-path order so doc_ids and chunk_ids are
    stable across runs. Unreadable files are recorded and skipped; an empty
    resulting corpus is fatal.
    """
    sorted_paths = _expand_paths(paths)
    if not sorted_paths:
        raise CorpusError("empty corpus: no input files")
    documents: list[Document] = []
    chunks: list[Chunk] = []
    file_errors: list[dict] = []
    doc_ids = _doc_ids_for(sorted_paths)
    for doc_id, path in zip(doc_ids, sorted_paths):
        try:
            text, warnings = _read_document_text(path)
            if not text.strip():
                raise CorpusError(f"document is empty after whitespace normalization: {path}")
            tokens = tokenize(text, cfg)
            if not tokens:
                raise CorpusError(f"document has no tokens: {path}")
        except ConfigurationError:
            raise
        except Exception as exc:
            log.warning("skipping %s: %s", path, exc)
            file_errors.append({"path": str(path), "error": str(exc)})
            continue
        doc = Document(
            doc_id=doc_id,
            source_path=str(path),
            text=text,
            token_count=len(tokens),
            warnings=warnings,
        )
        documents.append(doc)
        chunks.extend(chunk_document(doc, cfg, tokens=tokens))
    if not documents:
        raise CorpusError("empty corpus: no readable documents")
    return Corpus(documents=documents, chunks=chunks, config=cfg, file_errors=file_errors)


def write_chunk_manifest(chunks: list[Chunk], path: str | Path) -> None:
    """Emit the chunk manifest as JSON Lines, one object per chunk."""
    with open(path, "w", encoding="utf-8") as fh:
        for chunk in chunks:
            fh.write(json.dumps(chunk.to_json(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def read_chunk_manifest(path: str | Path) -> list[Chunk]:
    chunks = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                chunks.append(Chunk.from_json(json.loads(line)))
    return chunks
