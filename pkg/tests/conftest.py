"""Shared fixtures: synthetic exam corpus with an independently computed
manifest, platform builders, and suite-wide guards (no network, total
runtime budget)."""

from __future__ import annotations

import random
import socket
import time

import pytest
from hypothesis import settings

from baclab import AppConfig, Platform

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")

SUBJECTS = ("Limba si literatura romana", "Informatica")

_PROMPTS = (
    "Se consideră algoritmul alăturat. Ce se afișează?",
    "Analizați textul dat și formulați răspunsul cerut.",
    "Scrieți definiția și dați un exemplu potrivit.",
    "Precizați valoarea expresiei pentru datele de intrare date.",
    "Comentați secvența subliniată din fragmentul citat.",
)

_CRITERIA = (
    "definirea corectă a conceptului",
    "exemplu funcțional complet",
    "argumentarea alegerii făcute",
    "structura logică a răspunsului",
    "utilizarea limbajului de specialitate",
    "corectitudinea calculului",
)


def synth_exam(rng: random.Random, subject: str, year: int, variant: str = "v1"):
    """One synthetic exam document plus a manifest of expected facts.

    The manifest is computed here from the generator's own bookkeeping,
    never through the package, so it can serve as an oracle for parsing
    and scoring.
    """
    slug = "info" if subject == "Informatica" else "ro"
    exam_id = f"{slug}-{year}-{variant}"
    office = 10
    questions_s1, questions_s2, scheme, q_manifest = [], [], {}, []

    for qnum in range(1, 4):                      # three grid questions
        qid = f"q{qnum}"
        kind = rng.choice(("single_choice", "multiple_choice"))
        labels = list("abcde"[: rng.randint(3, 5)])
        if kind == "single_choice":
            correct = [rng.choice(labels)]
        else:
            correct = sorted(rng.sample(labels, rng.randint(2, len(labels) - 1)))
        points = rng.randint(3, 6)
        questions_s1.append({
            "question_id": qid,
            "kind": kind,
            "prompt": f"{rng.choice(_PROMPTS)} [{exam_id} {qid}]",
            "max_points": points,
            "options": [{"label": lab, "text": f"varianta {lab} ({rng.randint(1, 99)})"}
                        for lab in labels],
        })
        scheme[qid] = {"correct_options": correct}
        q_manifest.append({"question_id": qid, "kind": kind, "max_points": points,
                           "labels": labels, "correct": correct})

    for qnum in range(4, 6):                      # two open questions
        qid = f"q{qnum}"
        criteria = [
            {"text": f"{rng.choice(_CRITERIA)} [{qid}.{i}]", "points": rng.randint(1, 5)}
            for i in range(rng.randint(2, 4))
        ]
        points = sum(c["points"] for c in criteria)
        questions_s2.append({
            "question_id": qid,
            "kind": "open_text",
            "prompt": f"{rng.choice(_PROMPTS)} [{exam_id} {qid}]",
            "max_points": points,
        })
        scheme[qid] = {"criteria": criteria}
        q_manifest.append({"question_id": qid, "kind": "open_text", "max_points": points,
                           "criteria_points": [c["points"] for c in criteria],
                           "criteria_texts": [c["text"] for c in criteria]})

    total = office + sum(q["max_points"] for q in q_manifest)
    doc = {
        "format_version": 1,
        "exam_id": exam_id,
        "subject": subject,
        "year": year,
        "variant_label": f"varianta {variant}",
        "time_limit_minutes": 180,
        "office_points": office,
        "total_points": total,
        "sections": [
            {"section_label": "SUBIECTUL I", "questions": questions_s1},
            {"section_label": "SUBIECTUL II", "questions": questions_s2},
        ],
        "scheme": scheme,
    }
    manifest = {
        "exam_id": exam_id,
        "subject": subject,
        "year": year,
        "office_points": office,
        "total_points": total,
        "questions": q_manifest,
    }
    return doc, manifest


def synth_corpus(rng: random.Random, years=range(2019, 2024)):
    """2 subjects x 5 years of synthetic exams, with manifests."""
    return [synth_exam(rng, subject, year) for subject in SUBJECTS for year in years]


def simple_exam_doc(exam_id: str = "info-2023-v1", subject: str = "Informatica",
                    year: int = 2023) -> dict:
    """Small handwritten exam: two grid questions plus one open question."""
    return {
        "format_version": 1,
        "exam_id": exam_id,
        "subject": subject,
        "year": year,
        "variant_label": "varianta 1",
        "time_limit_minutes": 120,
        "office_points": 10,
        "total_points": 30,
        "sections": [
            {"section_label": "SUBIECTUL I", "questions": [
                {"question_id": "q1", "kind": "single_choice", "prompt": "Cât face 2+2?",
                 "max_points": 5,
                 "options": [{"label": "a", "text": "3"}, {"label": "b", "text": "4"},
                              {"label": "c", "text": "5"}]},
                {"question_id": "q2", "kind": "multiple_choice",
                 "prompt": "Care numere sunt pare?", "max_points": 5,
                 "options": [{"label": "a", "text": "2"}, {"label": "b", "text": "3"},
                              {"label": "c", "text": "4"}]},
            ]},
            {"section_label": "SUBIECTUL II", "questions": [
                {"question_id": "q3", "kind": "open_text",
                 "prompt": "Explicați recursivitatea și dați un exemplu.",
                 "max_points": 10},
            ]},
        ],
        "scheme": {
            "q1": {"correct_options": ["b"]},
            "q2": {"correct_options": ["a", "c"]},
            "q3": {"criteria": [{"text": "definiția corectă", "points": 4},
                                 {"text": "exemplu funcțional", "points": 6}]},
        },
    }


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240901)


@pytest.fixture
def platform() -> Platform:
    return Platform(AppConfig(salt="test-salt"))


@pytest.fixture
def file_platform(tmp_path) -> Platform:
    return Platform(AppConfig(store_path=str(tmp_path / "store"), salt="test-salt"))


@pytest.fixture(autouse=True, scope="session")
def no_network():
    """The whole suite must run offline; any socket connect is a bug."""
    real_connect = socket.socket.connect

    def blocked(self, address):
        raise RuntimeError(f"network access attempted in tests: {address!r}")

    socket.socket.connect = blocked
    try:
        yield
    finally:
        socket.socket.connect = real_connect


def pytest_sessionstart(session):
    session.config._suite_started_at = time.monotonic()


def pytest_sessionfinish(session, exitstatus):
    started = getattr(session.config, "_suite_started_at", None)
    if started is None:
        return
    elapsed = time.monotonic() - started
    budget = 60.0
    verdict = "PASS" if elapsed < budget else "FAIL"
    print(f"\n{verdict}: suite runtime {elapsed:.1f}s within offline budget {budget:.0f}s")
    if elapsed >= budget and session.exitstatus == 0:
        session.exitstatus = 1
