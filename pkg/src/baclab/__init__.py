"""Self-hostable exam practice and assessment-research platform.

Core pieces: a validated exam corpus, anonymous resumable practice
sessions, deterministic plus model-backed scoring, a rate-limited
multi-provider model gateway, an offline evaluation harness, an HTTP
facade, and an operator CLI. Everything runs against a pluggable document
store; an in-memory store and a file-backed store ship in the box.
"""

from .assessment import (
    DISCLAIMER,
    AssessmentEngine,
    AssessmentResult,
    PromptDocument,
    build_prompt,
    extract_blocks,
    format_score_block,
    parse_assessment,
    score_choice,
)
from .clock import SYSTEM_CLOCK, Clock, SimulatedClock, SystemClock
from .config import AppConfig, Platform
from .corpus import (
    Exam,
    ExamStore,
    GradingScheme,
    Question,
    SchemeItem,
    parse_exam_document,
    student_projection,
)
from .errors import PlatformError
from .evaluation import AgreementMetrics, EvalHarness, ExpertGrade, GroundTruth
from .gateway import (
    CompletionRecord,
    Gateway,
    MockTransport,
    ProviderConfig,
    WindowedTokenBucket,
    load_provider_registry,
    mock_provider,
)
from .sessions import SessionState, SessionStore, Submission, identify
from .store import DocumentStore, FileStore, MemoryStore, open_store

__version__ = "0.1.0"

__all__ = [
    "AgreementMetrics",
    "AppConfig",
    "AssessmentEngine",
    "AssessmentResult",
    "Clock",
    "CompletionRecord",
    "DISCLAIMER",
    "DocumentStore",
    "EvalHarness",
    "Exam",
    "ExamStore",
    "ExpertGrade",
    "FileStore",
    "Gateway",
    "GradingScheme",
    "GroundTruth",
    "MemoryStore",
    "MockTransport",
    "Platform",
    "PlatformError",
    "PromptDocument",
    "ProviderConfig",
    "Question",
    "SYSTEM_CLOCK",
    "SchemeItem",
    "SessionState",
    "SessionStore",
    "SimulatedClock",
    "Submission",
    "SystemClock",
    "WindowedTokenBucket",
    "build_prompt",
    "extract_blocks",
    "format_score_block",
    "identify",
    "load_provider_registry",
    "mock_provider",
    "open_store",
    "parse_assessment",
    "parse_exam_document",
    "score_choice",
    "student_projection",
    "__version__",
]
