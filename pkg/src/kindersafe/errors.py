"""Exception taxonomy shared across the pipeline.

Every error a caller may want to catch programmatically gets its own class;
transient vs. permanent distinctions matter because the detector decides
between quarantining one sample and pausing the whole run based on them.
"""

from __future__ import annotations


class KindersafeError(Exception):
    """Base class for all pipeline errors."""


class SchemaError(KindersafeError):
    """A manifest or registry file violates its schema.

    ``line_errors`` holds ``(line_number, reason)`` pairs for every offending
    line, so a single load reports all problems at once instead of failing on
    the first.
    """

    def __init__(self, message: str, line_errors: list[tuple[int, str]] | None = None):
        self.line_errors = line_errors or []
        if self.line_errors:
            detail = "; ".join(f"line {n}: {reason}" for n, reason in self.line_errors)
            message = f"{message}: {detail}"
        super().__init__(message)


class DuplicateIdError(KindersafeError):
    """Two records in one manifest share an id."""

    def __init__(self, sample_id: str):
        self.sample_id = sample_id
        super().__init__(f"duplicate sample id: {sample_id!r}")


class InvalidBoxError(KindersafeError, ValueError):
    """A bounding box violates coordinate ordering or the [0, 1] range."""


class UnknownClassError(KindersafeError, KeyError):
    """A class name is absent from the loaded hierarchy."""

    def __init__(self, class_name: str):
        self.class_name = class_name
        super().__init__(f"unknown class: {class_name!r}")


class ImageUnreadableError(KindersafeError):
    """An image reference could not be opened or decoded."""


class ScorerUnavailableError(KindersafeError):
    """The image-text similarity scorer cannot be reached; filtering aborts."""


class UnknownPromptError(KindersafeError, KeyError):
    """Requested prompt index is not registered."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"no prompt registered under index {index}")


class EmptyPromptError(KindersafeError, ValueError):
    """Attempted to register an empty prompt text."""


class VqaTimeoutError(KindersafeError):
    """The inference endpoint did not answer within the configured timeout."""


class TransportError(KindersafeError):
    """Network-level failure talking to an endpoint (after retries)."""


class BackendRejectionError(KindersafeError):
    """The endpoint returned a 4xx response; never retried.

    The response body is captured for the audit trail.
    """

    def __init__(self, status_code: int, body: str):
        self.status_code = status_code
        self.body = body
        super().__init__(f"backend rejected request with HTTP {status_code}")


class UnparseableAnswerError(KindersafeError):
    """A raw model answer could not be mapped to a binary verdict.

    Callers must route the sample to quarantine; mapping this error to a
    negative verdict is forbidden (fail-safe rule).
    """

    def __init__(self, raw_text: str):
        self.raw_text = raw_text
        super().__init__(f"answer cannot be parsed as yes/no: {raw_text!r}")


class UnknownGroundTruthError(KindersafeError):
    """An operation requiring ground truth met a sample without one."""

    def __init__(self, sample_ids: list[str]):
        self.sample_ids = sample_ids
        shown = ", ".join(sample_ids[:5])
        more = f" (+{len(sample_ids) - 5} more)" if len(sample_ids) > 5 else ""
        super().__init__(f"ground truth unknown for: {shown}{more}")


class BackendDownError(KindersafeError):
    """The backend is unreachable; the run paused with resumable state."""


class RunLockedError(KindersafeError):
    """Another live process already owns this run directory."""


class DanglingOverrideError(KindersafeError):
    """An adjudication references a sample id with no decision record."""

    def __init__(self, sample_id: str):
        self.sample_id = sample_id
        super().__init__(f"adjudication for unknown sample id: {sample_id!r}")


class InsufficientPoolError(KindersafeError):
    """A sampling plan asks for more samples than the eligible pool holds."""

    def __init__(self, requested_pos: int, available_pos: int, requested_neg: int, available_neg: int):
        self.available_pos = available_pos
        self.available_neg = available_neg
        super().__init__(
            f"pool too small: need {requested_pos} positives (have {available_pos}), "
            f"{requested_neg} negatives (have {available_neg})"
        )


class UnknownModelRateError(KindersafeError, KeyError):
    """No per-image energy rate is known for the requested model."""

    def __init__(self, model_name: str, known: list[str]):
        self.model_name = model_name
        super().__init__(f"no energy rate for model {model_name!r}; known: {', '.join(sorted(known))}")


class NoPowerConfigError(KindersafeError):
    """Energy measurement requested without a device power figure or fallback rate."""


class BindError(KindersafeError):
    """The review service could not bind its listen address."""
