"""Exception hierarchy.

Every failure raised by the library carries a machine-readable ``code`` and a
``details`` mapping so the CLI can turn it into a JSON diagnostic line.
"""


class StepconfError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for it."""

    code = "error"
    exit_code = 2

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_record(self):
        record = {"level": "error", "code": self.code, "message": self.message}
        record.update(self.details)
        return record


class InvalidGraphError(StepconfError):
    code = "invalid-graph"

    def __init__(self, violations):
        super().__init__("graph failed validation", violations=list(violations))
        self.violations = list(violations)


class TraceError(StepconfError):
    code = "invalid-trace"


class ParseError(StepconfError):
    """Raised by the structured-output parser; ``offset`` is a UTF-8 byte offset."""

    code = "parse-error"

    def __init__(self, message, offset=0, **details):
        super().__init__(message, offset=offset, **details)
        self.offset = offset


class NoConstructorError(ParseError):
    code = "no-constructor"


class UnbalancedDelimiterError(ParseError):
    code = "unbalanced-delimiter"


class MissingKeyError(ParseError):
    code = "missing-key"


class SchemaError(StepconfError):
    """Corpus/file schema violation located by a JSON pointer."""

    code = "schema-error"

    def __init__(self, message, pointer=""):
        super().__init__(message, pointer=pointer)
        self.pointer = pointer


class ConfigError(StepconfError):
    code = "config-error"


class ProviderError(StepconfError):
    """Similarity/entailment/LLM transport failure."""

    code = "provider-error"
    exit_code = 3

    def __init__(self, message, retryable=True, **details):
        super().__init__(message, retryable=retryable, **details)
        self.retryable = retryable


class EmbeddingMissError(StepconfError):
    code = "embedding-miss"


class EmptyInputError(StepconfError):
    code = "empty-input"


class NoAnchorsError(StepconfError):
    code = "no-anchors"

    def __init__(self, message="no consensus anchors", **details):
        super().__init__(message, **details)


class SizeGuardError(StepconfError):
    code = "size-guard"


class SingleClassError(StepconfError):
    code = "single-class"


class DimensionError(StepconfError):
    code = "dimension-mismatch"


class ModelFormatError(StepconfError):
    code = "model-format"
