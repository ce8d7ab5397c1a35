"""HTTP surface of the submission engine under the ``/assemble`` prefix.

Routes: POST /assemble/submit, GET /assemble/auth/authorize,
GET/DELETE /assemble/auth/token, GET /assemble/status, plus an optional
static mount at ``/`` for the web client. Sessions are opaque cookie ids
mapped to in-memory token storage; token values never appear in any
response body, log line or telemetry event.
"""

from __future__ import annotations

import json
import logging
import secrets
import threading
from dataclasses import dataclass
from pathlib import Path

import click
import uvicorn
from fastapi import FastAPI, Request, Response
from fastapi.staticfiles import StaticFiles
from starlette.concurrency import run_in_threadpool

from . import __version__
from .analysis import Snippet
from .errors import (
    AuthRequired,
    ForgeUnreachable,
    PipelineError,
    ProjectNotFound,
    ValidationFailed,
)
from .forge import ForgeClient
from .gateway import AuthFlow
from .pipeline import SubmissionRequest, submit
from .project import discover_project
from .telemetry import EventKind, Telemetry

logger = logging.getLogger(__name__)

SESSION_COOKIE = "microsubmit_session"


@dataclass
class ServiceSettings:
    project_root: Path
    forge_url: str
    gateway_url: str
    client_id: str
    telemetry_path: Path | None = None
    telemetry_enabled: bool = False
    static_dir: Path | None = None
    fork_wait: float = 30.0


@dataclass
class _Session:
    token: str | None = None
    username: str | None = None
    state: str | None = None


class _Sessions:
    def __init__(self):
        self._lock = threading.Lock()
        self._by_id: dict[str, _Session] = {}

    def get_or_create(self, request: Request, response: Response) -> tuple[str, _Session]:
        session_id = request.cookies.get(SESSION_COOKIE)
        with self._lock:
            if session_id and session_id in self._by_id:
                return session_id, self._by_id[session_id]
            session_id = secrets.token_urlsafe(32)
            session = _Session()
            self._by_id[session_id] = session
        response.set_cookie(SESSION_COOKIE, session_id, httponly=True, samesite="lax")
        return session_id, session


def create_app(settings: ServiceSettings) -> FastAPI:
    app = FastAPI(title="micro-submission engine", version=__version__)
    forge = ForgeClient(settings.forge_url, fork_wait=settings.fork_wait)
    flow = AuthFlow(
        settings.forge_url, settings.gateway_url, settings.client_id, forge_client=forge
    )
    telemetry = Telemetry(settings.telemetry_path, settings.telemetry_enabled)
    sessions = _Sessions()

    @app.post("/assemble/submit")
    async def submit_route(request: Request, response: Response) -> dict:
        session_id, session = sessions.get_or_create(request, response)

        try:
            payload = json.loads(await request.body())
        except ValueError:
            response.status_code = 400
            return {"result": "error", "message": "malformed JSON body"}
        if not isinstance(payload, dict) or not isinstance(payload.get("code_content"), str):
            response.status_code = 400
            return {"result": "error", "message": "code_content (string) is required"}

        cell_id = payload.get("cell_id")
        dry_run = bool(payload.get("dry_run", False))
        telemetry.record(
            EventKind.SUBMIT_REQUESTED,
            session_id,
            {"cell_id": str(cell_id or ""), "dry_run": str(dry_run).lower()},
        )

        submission = SubmissionRequest(
            snippet=Snippet(payload["code_content"], origin=cell_id),
            token=session.token,
            start_dir=settings.project_root,
            dry_run=dry_run,
        )
        try:
            result = await run_in_threadpool(submit, submission, forge)
        except ValidationFailed as exc:
            kinds = ",".join(sorted({d.kind.value for d in exc.report.diagnostics}))
            telemetry.record(EventKind.VALIDATION_FAILED, session_id, {"kinds": kinds})
            response.status_code = 422
            return {
                "result": "invalid",
                "diagnostics": [d.as_dict() for d in exc.report.diagnostics],
            }
        except AuthRequired:
            telemetry.record(EventKind.SUBMIT_FAILED, session_id, {"stage": "auth"})
            response.status_code = 401
            return {"result": "error", "message": "authentication required"}
        except ProjectNotFound:
            telemetry.record(EventKind.SUBMIT_FAILED, session_id, {"stage": "discover"})
            response.status_code = 503
            return {"result": "error", "message": "no project discovered at the configured root"}
        except PipelineError as exc:
            telemetry.record(EventKind.SUBMIT_FAILED, session_id, {"stage": exc.stage})
            response.status_code = 502
            return {"result": "error", "message": f"submission failed at stage {exc.stage}"}
        except Exception:
            logger.exception("unexpected submission failure")
            telemetry.record(EventKind.SUBMIT_FAILED, session_id, {"stage": "internal"})
            response.status_code = 500
            return {"result": "error", "message": "internal error"}

        telemetry.record(
            EventKind.SUBMIT_SUCCEEDED,
            session_id,
            {
                "elapsed_ms": str(result.elapsed_ms),
                "pr": str(result.pr.number),
                "files": str(len(result.created_files)),
            },
        )
        return {"result": "created", "url": result.pr.url}

    @app.get("/assemble/auth/authorize")
    def authorize_route(request: Request, response: Response) -> dict:
        session_id, session = sessions.get_or_create(request, response)
        state, authorize_url = flow.begin_auth()
        session.state = state  # latest flow wins for this session
        telemetry.record(EventKind.AUTH_STARTED, session_id, {})
        return {"authorize_url": authorize_url, "state": state}

    @app.get("/assemble/auth/token")
    def token_route(request: Request, response: Response) -> dict:
        session_id, session = sessions.get_or_create(request, response)
        if session.state is None:
            return {"status": "none"}
        try:
            result = flow.poll_token(session.state)
        except ForgeUnreachable:
            response.status_code = 502
            return {"status": "error"}
        status = result.get("status")
        if status == "ok":
            session.token = result["access_token"]
            session.username = flow.auth_status(session.token)
            telemetry.record(
                EventKind.AUTH_COMPLETED, session_id, {"username": session.username or ""}
            )
            return {"status": "ok", "username": session.username}
        return {"status": status or "error"}

    @app.delete("/assemble/auth/token")
    def clear_token_route(request: Request, response: Response) -> dict:
        _, session = sessions.get_or_create(request, response)
        session.token = None
        session.username = None
        session.state = None
        return {"status": "cleared"}

    @app.get("/assemble/status")
    def status_route(request: Request, response: Response) -> dict:
        _, session = sessions.get_or_create(request, response)
        try:
            config, _root = discover_project(settings.project_root)
        except ProjectNotFound:
            response.status_code = 503
            return {"message": "no project discovered"}
        authenticated = flow.auth_status(session.token) is not None
        return {
            "project": config.slug,
            "upstream": str(config.upstream),
            "authenticated": authenticated,
            "version": __version__,
        }

    if settings.static_dir is not None and Path(settings.static_dir).is_dir():
        app.mount("/", StaticFiles(directory=settings.static_dir, html=True), name="frontend")

    return app


@click.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8020, show_default=True, type=int)
@click.option("--project-root", envvar="MICROSUBMIT_PROJECT_ROOT", default=".", show_default=True)
@click.option("--forge-url", envvar="MICROSUBMIT_FORGE_URL", required=True)
@click.option("--gateway-url", envvar="MICROSUBMIT_GATEWAY_URL", required=True)
@click.option("--client-id", envvar="MICROSUBMIT_CLIENT_ID", required=True)
@click.option("--telemetry-file", envvar="MICROSUBMIT_TELEMETRY_FILE", default=None, type=click.Path(dir_okay=False))
@click.option("--telemetry/--no-telemetry", default=False, show_default=True, help="Opt in to usage event capture.")
@click.option("--static-dir", envvar="MICROSUBMIT_STATIC_DIR", default=None, type=click.Path(file_okay=False))
def main(host, port, project_root, forge_url, gateway_url, client_id, telemetry_file, telemetry, static_dir):
    """Run the submission engine HTTP service."""
    settings = ServiceSettings(
        project_root=Path(project_root),
        forge_url=forge_url,
        gateway_url=gateway_url,
        client_id=client_id,
        telemetry_path=Path(telemetry_file) if telemetry_file else None,
        telemetry_enabled=telemetry,
        static_dir=Path(static_dir) if static_dir else None,
    )
    uvicorn.run(create_app(settings), host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
