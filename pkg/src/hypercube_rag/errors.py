"""Exception hierarchy shared by the library and the CLI exit-code mapping."""

from __future__ import annotations


class HypercubeError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 2


class UsageError(HypercubeError):
    exit_code = 1


class DataError(HypercubeError):
    """Bad input data: malformed files, unknown dimensions, duplicate ids."""

    exit_code = 2


class UnknownDimensionError(DataError, KeyError):
    def __init__(self, dimension: str, valid: list[str] | tuple[str, ...] = ()):
        self.dimension = dimension
        self.valid = list(valid)
        msg = f"unknown dimension {dimension!r}"
        if self.valid:
            msg += f"; valid dimensions: {', '.join(self.valid)}"
        super().__init__(msg)

    def __str__(self) -> str:  # KeyError would repr() the message
        return self.args[0]


class DuplicateDocumentError(DataError):
    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        super().__init__(f"document {doc_id!r} is already indexed")


class BackendError(HypercubeError):
    """A model backend (chat or embedding) failed or is unavailable."""

    exit_code = 3

    def __init__(self, message: str, *, retryable: bool = False, **context):
        self.retryable = retryable
        self.context = context
        if context:
            details = ", ".join(f"{k}={v!r}" for k, v in sorted(context.items()))
            message = f"{message} ({details})"
        super().__init__(message)


class UnscriptedPromptError(BackendError):
    def __init__(self, prompt_hash: str):
        self.prompt_hash = prompt_hash
        super().__init__(f"unscripted prompt: no canned reply for hash {prompt_hash}")


class ReplyParseError(BackendError):
    """The model answered, but not in the required structured format."""

    def __init__(self, message: str, raw: str, **context):
        self.raw = raw
        super().__init__(message, **context)


class TemplateError(UsageError):
    pass
