"""Operator command line: ingestion, validation, export, offline eval.

Exit codes: 0 success, 1 validation failure, 2 I/O or configuration
error. Data goes to standard output (or --out), human chatter to standard
error, so pipelines can consume the output directly.
"""

from __future__ import annotations

import sys

import click

from .config import AppConfig, Platform
from .errors import ConflictError, ParseError, PlatformError, ValidationError

_VALIDATION_ERRORS = (ValidationError, ParseError, ConflictError)


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _platform(ctx: click.Context) -> Platform:
    try:
        return Platform(ctx.obj)
    except (PlatformError, OSError) as e:
        _fail(2, str(e))


@click.group()
@click.option("--store", help="store directory (default: BACLAB_STORE or in-memory)")
@click.option("--salt", help="deployment salt (default: BACLAB_SALT)")
@click.option("--providers", help="provider registry file (default: BACLAB_PROVIDERS)")
@click.pass_context
def main(ctx: click.Context, store: str | None, salt: str | None, providers: str | None):
    """Self-hosted exam practice platform, operator tooling."""
    config = AppConfig.from_env()
    if store:
        config.store_path = store
    if salt:
        config.salt = salt
    if providers:
        config.provider_registry = providers
    ctx.obj = config


@main.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path())
@click.pass_context
def ingest(ctx: click.Context, paths: tuple[str, ...]):
    """Validate and store exam files; prints one exam id per file."""
    platform = _platform(ctx)
    for path in paths:
        try:
            with open(path, encoding="utf-8") as f:
                document = f.read()
        except OSError as e:
            _fail(2, str(e))
        try:
            exam_id = platform.exams.ingest_exam(document)
        except _VALIDATION_ERRORS as e:
            _fail(1, f"{path}: {e}")
        click.echo(exam_id)
    click.echo(f"ingested {len(paths)} file(s)", err=True)


@main.command()
@click.pass_context
def validate(ctx: click.Context):
    """Re-check every stored exam; prints violations, exits 1 if any."""
    platform = _platform(ctx)
    violations = platform.exams.validate_corpus()
    for v in violations:
        click.echo(f"{v.exam_id}\t{v.question_id or '-'}\t{v.message}")
    count = len(platform.exams.list_exams())
    if violations:
        _fail(1, f"{len(violations)} violation(s) across {count} exam(s)")
    click.echo(f"corpus clean: {count} exam(s)", err=True)


@main.command()
@click.option("--exam", "exam_id", help="limit to one exam id")
@click.option("--subject", help="limit to one subject")
@click.option("--out", type=click.Path(), help="output file (default: stdout)")
@click.pass_context
def export(ctx: click.Context, exam_id: str | None, subject: str | None, out: str | None):
    """Export the anonymized submission dataset as NDJSON."""
    platform = _platform(ctx)
    try:
        stream = open(out, "w", encoding="utf-8") if out else sys.stdout
    except OSError as e:
        _fail(2, str(e))
    try:
        count = 0
        for line in platform.sessions.export_ndjson(exam_id=exam_id, subject=subject):
            stream.write(line)
            count += 1
    finally:
        if out:
            stream.close()
    click.echo(f"exported {count} record(s)", err=True)


@main.group(name="eval")
def eval_group():
    """Offline evaluation: runs, expert grades, agreement reports."""


@eval_group.command(name="run")
@click.option("--providers", "provider_list", required=True,
              help="comma-separated provider ids")
@click.option("--submissions", "submissions_file", required=True, type=click.Path(),
              help="file with one submission id per line")
@click.option("--run-id", help="resume or name the run (default: generated)")
@click.option("--concurrency", default=1, show_default=True)
@click.pass_context
def eval_run(ctx: click.Context, provider_list: str, submissions_file: str,
             run_id: str | None, concurrency: int):
    """Evaluate submissions against providers; resumable by run id."""
    platform = _platform(ctx)
    try:
        with open(submissions_file, encoding="utf-8") as f:
            submission_ids = [line.strip() for line in f if line.strip()]
    except OSError as e:
        _fail(2, str(e))
    providers = [p.strip() for p in provider_list.split(",") if p.strip()]
    try:
        run = platform.harness.run_offline_eval(
            submission_ids, providers, run_id=run_id, concurrency=concurrency)
    except _VALIDATION_ERRORS as e:
        _fail(1, str(e))
    except PlatformError as e:
        _fail(2, str(e))
    click.echo(run["run_id"])
    click.echo(
        f"run {run['run_id']}: {run['n_ok']} ok, {run['n_failed']} failed, "
        f"{run['n_excluded']} excluded, {run['n_skipped']} pair(s) already recorded",
        err=True,
    )


@eval_group.command(name="grades")
@click.option("--file", "grades_file", required=True, type=click.Path(),
              help="expert grade CSV")
@click.pass_context
def eval_grades(ctx: click.Context, grades_file: str):
    """Ingest an expert-grade CSV file."""
    platform = _platform(ctx)
    try:
        with open(grades_file, encoding="utf-8") as f:
            count = platform.harness.ingest_expert_grades(f)
    except OSError as e:
        _fail(2, str(e))
    except _VALIDATION_ERRORS as e:
        _fail(1, str(e))
    click.echo(f"ingested {count} grade(s)", err=True)


@eval_group.command(name="report")
@click.option("--run", "run_id", required=True, help="run id to report on")
@click.option("--out", type=click.Path(), help="output file (default: stdout)")
@click.option("--format", "fmt", default="text", show_default=True,
              type=click.Choice(["text", "delimited"]))
@click.option("--policy", default="median", show_default=True,
              type=click.Choice(["single", "mean_rounded", "median"]))
@click.pass_context
def eval_report(ctx: click.Context, run_id: str, out: str | None, fmt: str, policy: str):
    """Render the agreement report for a finished run."""
    platform = _platform(ctx)
    try:
        run = platform.harness.get_run(run_id)
        truth = platform.harness.build_ground_truth(run["submission_ids"], policy)
        text = platform.harness.render_report(run_id, truth, fmt=fmt)
    except _VALIDATION_ERRORS as e:
        _fail(1, str(e))
    except PlatformError as e:
        _fail(2, str(e))
    if out:
        try:
            with open(out, "w", encoding="utf-8") as f:
                f.write(text)
        except OSError as e:
            _fail(2, str(e))
        click.echo(f"report written to {out}", err=True)
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
