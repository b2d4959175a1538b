"""Exception hierarchy shared across the toolkit."""


class RagvalError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(RagvalError):
    """Invalid configuration: bad config file, missing tokenizer command,
    endpoint misuse (e.g. a judge request with non-zero temperature)."""


class CorpusError(RagvalError):
    """Corpus-level failure, e.g. an empty corpus after ingestion."""


class TransportError(RagvalError):
    """All retry attempts against a model endpoint failed."""

    def __init__(self, message: str, last_status: int | None = None, attempts: int = 0):
        super().__init__(message)
        self.last_status = last_status
        self.attempts = attempts


class ProtocolError(RagvalError):
    """The endpoint answered, but the body violates the wire contract
    (malformed JSON, missing fields, inconsistent embedding dimensions)."""


class ParseError(RagvalError):
    """A judge transcript did not contain a usable output field."""


class ZeroVarianceError(RagvalError):
    """Correlation is undefined because one input has no variance."""


class EvaluationInvalidError(RagvalError):
    """An alignment evaluation cannot be trusted (too many parse failures,
    zero variance in scores)."""


class PipelineError(RagvalError):
    """A pipeline step failed in a way that aborts the run."""
