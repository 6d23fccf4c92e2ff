"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class ConVerSumError(Exception):
    """Base class for every error raised by this package."""


# corpus

class RecordError(ConVerSumError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class MissingField(RecordError):
    def __init__(self, line_no: int, key: str):
        self.key = key
        super().__init__(line_no, f"missing field {key!r}")


class EmptyText(ConVerSumError):
    def __init__(self, line_no: int | None = None, field: str = "text"):
        self.line_no = line_no
        self.field = field
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}empty {field}")


class UnknownLanguage(ConVerSumError):
    def __init__(self, tag: str, line_no: int | None = None):
        self.tag = tag
        self.line_no = line_no
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}unknown language tag {tag!r}")


class MalformedRecord(RecordError):
    pass


# generation

class BackendFailure(ConVerSumError):
    pass


class DegenerateOutput(ConVerSumError):
    pass


class CorruptCache(ConVerSumError):
    def __init__(self, path, detail: str = ""):
        self.path = path
        super().__init__(f"corrupt cache file {path}: {detail}".rstrip(": "))


# scoring

class EncoderFailure(ConVerSumError):
    pass


class LangIdFailure(ConVerSumError):
    pass


class DimensionMismatch(ConVerSumError, ValueError):
    pass


class ZeroVector(ConVerSumError, ValueError):
    pass


# contrastive

class IndexOutOfRange(ConVerSumError, IndexError):
    pass


# training

class NonFiniteLoss(ConVerSumError):
    def __init__(self, step: int, batch_ids):
        self.step = step
        self.batch_ids = list(batch_ids)
        super().__init__(f"non-finite loss at step {step} (batch {self.batch_ids})")


class CheckpointIOError(ConVerSumError):
    pass


class EmptyValidationSet(ConVerSumError):
    pass


class NoValidations(ConVerSumError):
    pass


# evaluation

class UnmatchedOutput(ConVerSumError):
    def __init__(self, document_id: str):
        self.document_id = document_id
        super().__init__(f"output for unknown document {document_id!r}")


class DuplicateOutput(ConVerSumError):
    def __init__(self, document_id: str):
        self.document_id = document_id
        super().__init__(f"duplicate output for document {document_id!r}")


class RowKeyMismatch(ConVerSumError):
    pass


# llm baseline

class SpecInvalid(ConVerSumError, ValueError):
    pass


class LlmError(ConVerSumError):
    pass


class TransientError(LlmError):
    """Retryable provider failure (timeouts, 5xx, 429)."""


class AuthError(LlmError):
    pass


class RateLimited(LlmError):
    pass


class ContextOverflow(LlmError):
    pass


# cli

class MissingUpstreamArtifact(ConVerSumError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"missing upstream artifact: {path}")
