"""Exception hierarchy shared by all platform modules.

Every error carries a stable machine tag so the HTTP layer and the CLI can
map it without string matching on messages.
"""

from __future__ import annotations


class PlatformError(Exception):
    """Base class for all domain errors raised by this package."""

    tag = "error"


class ParseError(PlatformError):
    tag = "parse_error"


class ValidationError(PlatformError):
    tag = "validation_error"


class ConflictError(PlatformError):
    tag = "conflict"


class NotFound(PlatformError):
    tag = "not_found"


class Forbidden(PlatformError):
    tag = "forbidden"


class InvalidEmail(PlatformError):
    tag = "invalid_email"


class VersionConflict(PlatformError):
    """Compare-and-set failed: the caller holds a stale version."""

    tag = "version_conflict"


class SessionClosed(PlatformError):
    tag = "session_closed"


class InvalidAnswer(PlatformError):
    tag = "invalid_answer"


class NotSubmitted(PlatformError):
    tag = "not_submitted"


class KindMismatch(PlatformError):
    tag = "kind_mismatch"


class UnparseableOutput(PlatformError):
    """Model output contained no valid score block."""

    tag = "unparseable_output"


class AssessmentUnavailable(PlatformError):
    """Model assessment failed after retries; the submission itself is safe."""

    tag = "assessment_unavailable"


class DuplicateProvider(PlatformError):
    tag = "duplicate_provider"


class InvalidConfig(PlatformError):
    tag = "invalid_config"


class RateBudgetExhausted(PlatformError):
    """Waiting for rate-limit headroom exceeded the configured bound."""

    tag = "rate_budget_exhausted"


class ProviderError(PlatformError):
    """Terminal provider rejection (bad request, auth failure)."""

    tag = "provider_error"


class EmptyIntersection(PlatformError):
    """No overlap between evaluated submissions and the ground truth."""

    tag = "empty_intersection"
