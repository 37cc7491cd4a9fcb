"""Stateless HTTP facade over the core modules.

All state lives in the document store, so any number of instances can
serve the same deployment interchangeably. Domain errors map one-to-one
from their machine tags to HTTP statuses; response bodies carry the tag
and a human message, never stack traces or secrets.

Run it with:  uvicorn --factory baclab.api:create_app
"""

from __future__ import annotations

import hmac
from dataclasses import asdict
from datetime import datetime

from fastapi import BackgroundTasks, Depends, FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from pydantic import BaseModel

from .assessment import DISCLAIMER
from .config import AppConfig, Platform
from .errors import PlatformError
from .sessions import SessionState

API_VERSION = 1

# one HTTP status per machine tag; the totality of this map is under test
ERROR_STATUS = {
    "error": 500,
    "parse_error": 400,
    "validation_error": 400,
    "conflict": 409,
    "not_found": 404,
    "forbidden": 403,
    "invalid_email": 400,
    "version_conflict": 409,
    "session_closed": 410,
    "invalid_answer": 400,
    "not_submitted": 409,
    "kind_mismatch": 400,
    "unparseable_output": 502,
    "assessment_unavailable": 503,
    "duplicate_provider": 409,
    "invalid_config": 500,
    "rate_budget_exhausted": 429,
    "provider_error": 502,
    "empty_intersection": 422,
}


class IdentifyBody(BaseModel):
    email: str


class StartSessionBody(BaseModel):
    student_key: str
    exam_id: str


class AnswerBody(BaseModel):
    payload: dict
    expected_version: int


class EvalRunBody(BaseModel):
    submission_ids: list[str]
    provider_ids: list[str]
    run_id: str | None = None
    concurrency: int = 1


def _error_body(tag: str, message: str) -> dict:
    return {"error": {"tag": tag, "message": message}}


def _session_view(session: SessionState) -> dict:
    return asdict(session)


def _remaining_seconds(session: SessionState, time_limit_minutes: int) -> int:
    # advisory countdown hint; the server never force-closes a session
    started = datetime.fromisoformat(session.started_at)
    now = datetime.now(tz=started.tzinfo)
    elapsed = (now - started).total_seconds()
    return max(0, int(time_limit_minutes * 60 - elapsed))


def create_app(config: AppConfig | None = None, platform: Platform | None = None) -> FastAPI:
    """Build one service instance. Separate instances over the same store
    are interchangeable."""
    platform = platform or Platform(config or AppConfig.from_env())
    app = FastAPI(title="exam practice service", version=str(API_VERSION),
                  openapi_url=None, docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=platform.config.cors_origins,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(PlatformError)
    async def platform_error_handler(request: Request, exc: PlatformError):
        status = ERROR_STATUS.get(exc.tag, 500)
        return JSONResponse(status_code=status, content=_error_body(exc.tag, str(exc)))

    class _Unauthorized(Exception):
        pass

    def admin_guard(request: Request) -> None:
        token = platform.config.admin_token
        header = request.headers.get("authorization", "")
        supplied = header[len("Bearer "):] if header.startswith("Bearer ") else ""
        if not token or not supplied or not hmac.compare_digest(supplied, token):
            raise _Unauthorized()

    @app.exception_handler(_Unauthorized)
    async def unauthorized_handler(request: Request, exc: _Unauthorized):
        return JSONResponse(
            status_code=401,
            content=_error_body("unauthorized", "missing or invalid admin token"),
            headers={"WWW-Authenticate": "Bearer"},
        )

    # -- student-facing ------------------------------------------------------

    @app.post("/api/identify")
    def http_identify(body: IdentifyBody):
        return {"student_key": platform.sessions.identify(body.email)}

    @app.get("/api/exams")
    def http_list_exams(subject: str | None = Query(default=None)):
        return {"exams": [asdict(s) for s in platform.exams.list_exams(subject)]}

    @app.get("/api/exams/{exam_id}")
    def http_get_exam(exam_id: str):
        return {"exam": platform.exams.get_student_view(exam_id)}

    @app.post("/api/sessions")
    def http_start_session(body: StartSessionBody):
        resumed = platform.sessions.find_open_session(body.student_key, body.exam_id)
        session = platform.sessions.start_or_resume_session(body.student_key, body.exam_id)
        return {"session": _session_view(session), "resumed": resumed is not None}

    @app.get("/api/sessions/{session_id}")
    def http_get_session(session_id: str):
        session = platform.sessions.get_session(session_id)
        exam_view = platform.exams.get_student_view(session.exam_id)
        return {
            "session": _session_view(session),
            "exam": exam_view,
            "remaining_seconds": _remaining_seconds(session, exam_view["time_limit_minutes"]),
        }

    @app.put("/api/sessions/{session_id}/answers/{question_id}")
    def http_record_answer(session_id: str, question_id: str, body: AnswerBody):
        session = platform.sessions.record_answer(
            session_id, question_id, body.payload, body.expected_version)
        return {"session": _session_view(session)}

    @app.post("/api/sessions/{session_id}/submit")
    def http_submit(session_id: str, background: BackgroundTasks):
        submissions = platform.sessions.submit_session(session_id)
        background.add_task(platform.engine.assess_session, session_id)
        return {
            "status": "submitted",
            "submission_ids": [s.submission_id for s in submissions],
        }

    @app.get("/api/sessions/{session_id}/results")
    def http_results(session_id: str):
        report = platform.engine.session_report(session_id)
        body = asdict(report)
        for item in body["items"]:
            item["disclaimer"] = DISCLAIMER if item["experimental"] else None
        body["disclaimer"] = DISCLAIMER
        return body

    # -- admin ---------------------------------------------------------------

    @app.post("/api/admin/exams", status_code=201)
    async def http_ingest_exam(request: Request, _: None = Depends(admin_guard)):
        document = await request.body()
        exam_id = platform.exams.ingest_exam(document)
        return {"exam_id": exam_id}

    @app.get("/api/admin/export")
    def http_export(subject: str | None = None, exam_id: str | None = None,
                    _: None = Depends(admin_guard)):
        lines = platform.sessions.export_ndjson(exam_id=exam_id, subject=subject)
        return StreamingResponse(lines, media_type="application/x-ndjson")

    @app.post("/api/admin/eval/runs", status_code=201)
    def http_eval_run(body: EvalRunBody, _: None = Depends(admin_guard)):
        run = platform.harness.run_offline_eval(
            body.submission_ids, body.provider_ids,
            run_id=body.run_id, concurrency=body.concurrency)
        return {"run": run}

    @app.get("/api/admin/eval/runs/{run_id}/report")
    def http_eval_report(run_id: str, policy: str = "median",
                         format: str = "text", _: None = Depends(admin_guard)):
        run = platform.harness.get_run(run_id)
        truth = platform.harness.build_ground_truth(run["submission_ids"], policy)
        text = platform.harness.render_report(run_id, truth, fmt=format)
        return PlainTextResponse(text)

    app.state.platform = platform
    return app
