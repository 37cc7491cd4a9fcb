"""HTTP facade: the full student flow, admin gating, error mapping, and
statelessness across service instances sharing one store."""

import json

import pytest
from fastapi.testclient import TestClient

import baclab.errors as errors_module
from baclab import AppConfig, Platform
from baclab.api import ERROR_STATUS, create_app
from baclab.assessment import DISCLAIMER
from baclab.corpus import SCHEME_FIELDS
from baclab.errors import PlatformError

from conftest import simple_exam_doc

EXAM_ID = "info-2023-v1"
ADMIN = {"Authorization": "Bearer parola-admin"}
EMAIL = "Elev.Unu@example.ro"


@pytest.fixture
def service():
    platform = Platform(AppConfig(salt="test-salt", admin_token="parola-admin"))
    platform.exams.ingest_exam(json.dumps(simple_exam_doc()))
    return platform, TestClient(create_app(platform=platform))


def _tag(response):
    return response.json()["error"]["tag"]


def _started(client):
    key = client.post("/api/identify", json={"email": EMAIL}).json()["student_key"]
    body = client.post("/api/sessions", json={"student_key": key, "exam_id": EXAM_ID}).json()
    return key, body["session"]


def _submitted(client):
    key, session = _started(client)
    sid, version = session["session_id"], session["version"]
    for qid, payload in [("q1", {"selected": ["b"]}), ("q2", {"selected": ["a", "c"]}),
                         ("q3", {"text": "Un răspuns cuprinzător."})]:
        r = client.put(f"/api/sessions/{sid}/answers/{qid}",
                       json={"payload": payload, "expected_version": version})
        version = r.json()["session"]["version"]
    submit = client.post(f"/api/sessions/{sid}/submit")
    assert submit.status_code == 200
    return key, sid, submit.json()


# -- student flow --------------------------------------------------------------

def test_identify_returns_a_key_and_never_the_email(service):
    _, client = service
    r = client.post("/api/identify", json={"email": EMAIL})
    assert r.status_code == 200
    assert len(r.json()["student_key"]) == 64
    assert EMAIL.lower() not in r.text.lower()


def test_identify_rejects_malformed_emails(service):
    _, client = service
    r = client.post("/api/identify", json={"email": "nu-e-email"})
    assert r.status_code == 400
    assert _tag(r) == "invalid_email"


def test_exam_listing_and_browse(service):
    _, client = service
    r = client.get("/api/exams", params={"subject": "Informatica"})
    assert [e["exam_id"] for e in r.json()["exams"]] == [EXAM_ID]
    assert client.get("/api/exams", params={"subject": "Istorie"}).json()["exams"] == []
    exam = client.get(f"/api/exams/{EXAM_ID}").json()["exam"]
    assert exam["time_limit_minutes"] == 120
    assert {q["question_id"] for s in exam["sections"] for q in s["questions"]} == {"q1", "q2", "q3"}
    assert client.get("/api/exams/absent").status_code == 404


def test_session_create_resume_and_countdown(service):
    _, client = service
    key, session = _started(client)
    again = client.post("/api/sessions", json={"student_key": key, "exam_id": EXAM_ID}).json()
    assert again["resumed"] is True
    assert again["session"]["session_id"] == session["session_id"]

    r = client.get(f"/api/sessions/{session['session_id']}").json()
    assert r["session"]["status"] == "in_progress"
    assert r["exam"]["exam_id"] == EXAM_ID
    assert 0 < r["remaining_seconds"] <= 120 * 60


def test_stale_writes_conflict_and_the_first_write_stands(service):
    _, client = service
    _, session = _started(client)
    sid = session["session_id"]
    ok = client.put(f"/api/sessions/{sid}/answers/q1",
                    json={"payload": {"selected": ["b"]}, "expected_version": session["version"]})
    assert ok.status_code == 200
    stale = client.put(f"/api/sessions/{sid}/answers/q1",
                       json={"payload": {"selected": ["a"]}, "expected_version": session["version"]})
    assert stale.status_code == 409
    assert _tag(stale) == "version_conflict"
    current = client.get(f"/api/sessions/{sid}").json()["session"]
    assert current["answers"]["q1"]["selected"] == ["b"]


def test_bad_answer_payloads_are_400(service):
    _, client = service
    _, session = _started(client)
    sid = session["session_id"]
    r = client.put(f"/api/sessions/{sid}/answers/q1",
                   json={"payload": {"selected": ["q"]}, "expected_version": session["version"]})
    assert r.status_code == 400
    assert _tag(r) == "invalid_answer"
    # body shape errors are the framework's own 422
    assert client.put(f"/api/sessions/{sid}/answers/q1",
                      json={"payload": {}}).status_code == 422


def test_results_only_after_submit(service):
    _, client = service
    _, session = _started(client)
    r = client.get(f"/api/sessions/{session['session_id']}/results")
    assert r.status_code == 409
    assert _tag(r) == "not_submitted"


def test_submit_assesses_and_reports(service):
    _, client = service
    _, sid, submitted = _submitted(client)
    assert submitted["status"] == "submitted"
    assert len(submitted["submission_ids"]) == 3

    results = client.get(f"/api/sessions/{sid}/results")
    assert results.status_code == 200
    body = results.json()
    assert body["total_score"] == 30            # 10 office + 5 + 5 + 10 full credit
    assert body["max_total"] == 30
    assert body["pending"] == []
    assert body["disclaimer"] == DISCLAIMER
    flags = {i["question_id"]: i["disclaimer"] for i in body["items"]}
    assert flags == {"q1": None, "q2": None, "q3": DISCLAIMER}
    assert {i["question_id"]: i["experimental"] for i in body["items"]} == {
        "q1": False, "q2": False, "q3": True}


def test_writes_after_submit_are_410(service):
    _, client = service
    _, sid, _ = _submitted(client)
    r = client.put(f"/api/sessions/{sid}/answers/q1",
                   json={"payload": {"selected": ["a"]}, "expected_version": 4})
    assert r.status_code == 410
    assert _tag(r) == "session_closed"
    assert client.post(f"/api/sessions/{sid}/submit").status_code == 410


def test_unknown_session_is_404(service):
    _, client = service
    assert client.get("/api/sessions/inexistent").status_code == 404


# -- projection hygiene ---------------------------------------------------------

def test_student_responses_never_carry_scheme_fields(service):
    """Everything a student sees before submitting is scanned for rubric
    leaks: no scheme keys and no raw email anywhere."""
    _, client = service
    key, session = _started(client)
    sid = session["session_id"]
    client.put(f"/api/sessions/{sid}/answers/q1",
               json={"payload": {"selected": ["b"]}, "expected_version": session["version"]})
    student_pages = [
        client.get("/api/exams"),
        client.get(f"/api/exams/{EXAM_ID}"),
        client.post("/api/sessions", json={"student_key": key, "exam_id": EXAM_ID}),
        client.get(f"/api/sessions/{sid}"),
    ]
    for response in student_pages:
        assert response.status_code == 200
        text = response.text
        for field in SCHEME_FIELDS:
            assert f'"{field}"' not in text
        assert EMAIL.lower() not in text.lower()


# -- error mapping ---------------------------------------------------------------

def test_every_domain_error_has_a_status():
    tags = {cls.tag for name in dir(errors_module)
            if isinstance(cls := getattr(errors_module, name), type)
            and issubclass(cls, PlatformError)}
    assert tags <= set(ERROR_STATUS)
    assert all(100 <= ERROR_STATUS[t] <= 599 for t in tags)


# -- admin ------------------------------------------------------------------------

def test_admin_requires_the_right_token(service):
    _, client = service
    doc = json.dumps(simple_exam_doc(exam_id="ro-2022-v1", subject="Romana", year=2022))
    assert client.post("/api/admin/exams", content=doc).status_code == 401
    wrong = client.post("/api/admin/exams", content=doc,
                        headers={"Authorization": "Bearer gresit"})
    assert wrong.status_code == 401
    assert wrong.headers["www-authenticate"] == "Bearer"
    right = client.post("/api/admin/exams", content=doc, headers=ADMIN)
    assert right.status_code == 201
    assert right.json() == {"exam_id": "ro-2022-v1"}


def test_admin_is_fully_disabled_without_a_configured_token():
    platform = Platform(AppConfig(salt="s"))    # no admin_token
    client = TestClient(create_app(platform=platform))
    r = client.get("/api/admin/export", headers={"Authorization": "Bearer oricare"})
    assert r.status_code == 401


def test_ingest_rejects_malformed_documents(service):
    _, client = service
    r = client.post("/api/admin/exams", content=b"{broken", headers=ADMIN)
    assert r.status_code == 400
    assert _tag(r) == "parse_error"
    doc = simple_exam_doc(exam_id="x-2021-v9", year=2021)
    doc["sections"][0]["questions"][0]["surprise"] = 1
    r = client.post("/api/admin/exams", content=json.dumps(doc), headers=ADMIN)
    assert r.status_code == 400
    assert _tag(r) == "validation_error"


def test_export_matches_the_library_byte_for_byte(service):
    platform, client = service
    _submitted(client)
    r = client.get("/api/admin/export", headers=ADMIN)
    assert r.status_code == 200
    assert r.headers["content-type"].startswith("application/x-ndjson")
    assert r.text == "".join(platform.sessions.export_ndjson())
    assert EMAIL.lower() not in r.text.lower()
    filtered = client.get("/api/admin/export", params={"subject": "Istorie"}, headers=ADMIN)
    assert filtered.text == ""


def test_eval_run_and_report_over_http(service):
    platform, client = service
    _, sid, submitted = _submitted(client)
    open_sub = submitted["submission_ids"][2]
    platform.harness.ingest_expert_grades([
        "submission_id,grader_id,score,breakdown,graded_at",
        f"{open_sub},g1,9,4;5,2026-01-10T10:00:00+00:00",
    ])
    r = client.post("/api/admin/eval/runs", headers=ADMIN, json={
        "submission_ids": submitted["submission_ids"],
        "provider_ids": ["mock"],
        "run_id": "http-run",
    })
    assert r.status_code == 201
    run = r.json()["run"]
    assert (run["n_ok"], run["n_excluded"]) == (1, 2)

    url = "/api/admin/eval/runs/http-run/report"
    first = client.get(url, params={"policy": "single"}, headers=ADMIN)
    assert first.status_code == 200
    assert first.text == client.get(url, params={"policy": "single"}, headers=ADMIN).text
    assert "MODEL-EXPERT AGREEMENT" in first.text
    delimited = client.get(url, params={"policy": "single", "format": "delimited"},
                           headers=ADMIN)
    assert delimited.text.startswith("kind\tprovider")

    assert client.get("/api/admin/eval/runs/absent/report", headers=ADMIN).status_code == 404
    assert client.get(url, params={"policy": "vibe"}, headers=ADMIN).status_code == 400
    assert client.get(url, params={"format": "xml", "policy": "single"},
                      headers=ADMIN).status_code == 400


# -- statelessness ----------------------------------------------------------------

def test_two_service_instances_share_one_store(tmp_path):
    path = str(tmp_path / "store")

    def make_client():
        config = AppConfig(store_path=path, salt="s", admin_token="parola-admin")
        return TestClient(create_app(platform=Platform(config)))

    a, b = make_client(), make_client()
    doc = json.dumps(simple_exam_doc())
    assert a.post("/api/admin/exams", content=doc, headers=ADMIN).status_code == 201

    key = b.post("/api/identify", json={"email": EMAIL}).json()["student_key"]
    session = b.post("/api/sessions", json={"student_key": key, "exam_id": EXAM_ID}).json()["session"]
    sid = session["session_id"]
    a.put(f"/api/sessions/{sid}/answers/q1",
          json={"payload": {"selected": ["b"]}, "expected_version": session["version"]})
    assert b.post(f"/api/sessions/{sid}/submit").status_code == 200
    results = a.get(f"/api/sessions/{sid}/results").json()
    assert results["total_score"] == 15         # 10 office + 5, blanks score 0

    export_a = a.get("/api/admin/export", headers=ADMIN).text
    export_b = b.get("/api/admin/export", headers=ADMIN).text
    assert export_a == export_b != ""
