"""Exception types shared across the package."""
from __future__ import annotations


class MetatoxError(Exception):
    """Base class for every error this package raises on purpose."""


# corpus ---------------------------------------------------------------


class MalformedRecord(MetatoxError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class UnknownLabel(MetatoxError):
    def __init__(self, raw_label: str, line_no: int | None = None):
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"no mapping for raw label {raw_label!r}{where}")
        self.raw_label = raw_label


class DuplicateId(MetatoxError):
    def __init__(self, sample_id: str, line_no: int | None = None):
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"duplicate sample id {sample_id!r}{where}")
        self.sample_id = sample_id


# llm gateway ----------------------------------------------------------


class MissingBinding(MetatoxError):
    def __init__(self, name: str):
        super().__init__(f"prompt placeholder {{{name}}} has no binding")
        self.name = name


class ProviderUnavailable(MetatoxError):
    def __init__(self, message: str, *, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class RateLimited(MetatoxError):
    def __init__(self, message: str = "rate limited by provider"):
        super().__init__(message)
        self.retryable = True


class ResponseTruncated(MetatoxError):
    pass


class OptionNotScorable(MetatoxError):
    pass


# embedding ------------------------------------------------------------


class EmptyText(MetatoxError):
    pass


class DimensionMismatch(MetatoxError):
    pass


class EmptyIndex(MetatoxError):
    pass


# graph construction ---------------------------------------------------


class EmptyRationale(MetatoxError):
    def __init__(self, sample_id: str):
        super().__init__(f"model returned an empty rationale for sample {sample_id!r}")
        self.sample_id = sample_id


class UnmappedElement(MetatoxError):
    def __init__(self, kind: str, surface: str):
        super().__init__(f"{kind} surface form {surface!r} missing from cluster map")
        self.kind = kind
        self.surface = surface


# graph store ----------------------------------------------------------


class SchemaVersionMismatch(MetatoxError):
    pass


# query ----------------------------------------------------------------


class NodeNotInGraph(MetatoxError):
    def __init__(self, node: str):
        super().__init__(f"node {node!r} is not in the graph")
        self.node = node


# detection ------------------------------------------------------------


class IdMismatch(MetatoxError):
    pass


class EmptyCorpus(MetatoxError):
    pass


# configuration --------------------------------------------------------


class ConfigError(MetatoxError):
    pass
