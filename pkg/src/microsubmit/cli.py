"""Command-line client: login, submit and status without a browser UI.

The CLI embeds the submission pipeline directly (no engine service in
the middle); it talks to the forge and the OAuth gateway itself.

Exit codes: 0 success; 1 login timeout, gateway failure or no project;
2 validation failure; 3 authentication required; 4 pipeline or forge
failure; 5 usage error (missing or out-of-range --cell).
"""

from __future__ import annotations

import json
import os
import sys
import time
import webbrowser
from pathlib import Path

import click

from .analysis import Snippet
from .errors import (
    AuthRequired,
    CellNotFound,
    ConfigError,
    ForgeUnreachable,
    MicrosubmitError,
    PipelineError,
    ProjectNotFound,
    ValidationFailed,
)
from .forge import ForgeClient
from .gateway import AuthFlow
from .notebook import code_cell_sources, select_code_cell
from .pipeline import SubmissionRequest, submit as run_submission
from .project import discover_project

POLL_INTERVAL = 2.0
LOGIN_TIMEOUT = 600.0


def default_token_path() -> Path:
    override = os.environ.get("MICROSUBMIT_TOKEN_FILE")
    if override:
        return Path(override)
    config_home = Path(os.environ.get("XDG_CONFIG_HOME", "~/.config")).expanduser()
    return config_home / "microsubmit" / "token"


def load_token(path: Path) -> str | None:
    try:
        token = path.read_text(encoding="utf-8").strip()
    except OSError:
        return None
    return token or None


def store_token(path: Path, token: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.parent.chmod(0o700)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w", encoding="utf-8") as handle:
        handle.write(token + "\n")
    path.chmod(0o600)  # tighten a pre-existing file too


@click.group()
def main():
    """Turn a validated code snippet into a pull request in one step."""


@main.command()
@click.option("--forge-url", envvar="MICROSUBMIT_FORGE_URL", required=True)
@click.option("--gateway-url", envvar="MICROSUBMIT_GATEWAY_URL", required=True)
@click.option("--client-id", envvar="MICROSUBMIT_CLIENT_ID", required=True)
@click.option("--token-file", envvar="MICROSUBMIT_TOKEN_FILE", default=None, type=click.Path(dir_okay=False))
@click.option("--timeout", default=LOGIN_TIMEOUT, show_default=True, type=float)
@click.option("--poll-interval", default=POLL_INTERVAL, show_default=True, type=float)
def login(forge_url, gateway_url, client_id, token_file, timeout, poll_interval):
    """Sign in at the forge via the OAuth gateway; caches the token."""
    try:
        flow = AuthFlow(forge_url, gateway_url, client_id)
    except ConfigError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(1)

    state, authorize_url = flow.begin_auth()
    click.echo("Open this URL to sign in:", err=True)
    click.echo(f"  {authorize_url}", err=True)
    try:
        webbrowser.open(authorize_url)
    except webbrowser.Error:
        pass

    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        try:
            result = flow.poll_token(state)
        except ForgeUnreachable as exc:
            click.echo(f"gateway unreachable: {exc}", err=True)
            sys.exit(1)
        status = result.get("status")
        if status == "ok":
            token = result["access_token"]
            token_path = Path(token_file) if token_file else default_token_path()
            store_token(token_path, token)
            username = flow.auth_status(token) or ""
            click.echo(username)
            sys.exit(0)
        if status == "gone":
            click.echo("sign-in expired or was already used; run login again", err=True)
            sys.exit(1)
        time.sleep(poll_interval)
    click.echo(f"timed out after {timeout:.0f}s waiting for sign-in", err=True)
    sys.exit(1)


@main.command(name="submit")
@click.argument("file", required=False, type=click.Path(exists=True, dir_okay=False, allow_dash=True))
@click.option("--cell", default=None, type=int, help="Code cell number (0-based among code cells) when FILE is a notebook document.")
@click.option("--dry-run", is_flag=True, help="Validate and plan paths without contacting the forge for writes.")
@click.option("--forge-url", envvar="MICROSUBMIT_FORGE_URL", required=True)
@click.option("--token-file", envvar="MICROSUBMIT_TOKEN_FILE", default=None, type=click.Path(dir_okay=False))
@click.option("--start-dir", default=".", show_default=True, help="Directory to discover the project from.")
def submit_command(file, cell, dry_run, forge_url, token_file, start_dir):
    """Submit a snippet from FILE (or stdin) as a pull request."""
    if file is None or file == "-":
        text = sys.stdin.read()
        origin = "stdin"
    else:
        text = Path(file).read_text(encoding="utf-8")
        origin = file

    cells = code_cell_sources(text)
    if cells is not None:
        if cell is None:
            click.echo("--cell is required for notebook documents", err=True)
            sys.exit(5)
        try:
            source = select_code_cell(text, cell)
        except CellNotFound as exc:
            click.echo(str(exc), err=True)
            sys.exit(5)
        origin = f"{origin}#cell{cell}"
    else:
        if cell is not None:
            click.echo("--cell only applies to notebook documents", err=True)
            sys.exit(5)
        source = text

    token_path = Path(token_file) if token_file else default_token_path()
    request = SubmissionRequest(
        snippet=Snippet(source, origin=origin),
        token=load_token(token_path),
        start_dir=start_dir,
        dry_run=dry_run,
    )
    forge = ForgeClient(forge_url)
    try:
        result = run_submission(request, forge)
    except ValidationFailed as exc:
        for diagnostic in exc.report.diagnostics:
            click.echo(f"line {diagnostic.line}: {diagnostic.message}", err=True)
        sys.exit(2)
    except AuthRequired:
        click.echo("not signed in; run: microsubmit login", err=True)
        sys.exit(3)
    except ProjectNotFound as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    except (PipelineError, MicrosubmitError) as exc:
        click.echo(str(exc), err=True)
        sys.exit(4)

    if dry_run:
        click.echo(f"branch: {result.branch}")
        for created in result.created_files:
            click.echo(f"would create: {created}")
    else:
        click.echo(result.pr.url)
    sys.exit(0)


@main.command()
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.option("--forge-url", envvar="MICROSUBMIT_FORGE_URL", default=None)
@click.option("--token-file", envvar="MICROSUBMIT_TOKEN_FILE", default=None, type=click.Path(dir_okay=False))
@click.option("--start-dir", default=".", show_default=True)
def status(as_json, forge_url, token_file, start_dir):
    """Show the discovered project and authentication state."""
    try:
        config, root = discover_project(start_dir)
    except ProjectNotFound as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)

    username = None
    token_path = Path(token_file) if token_file else default_token_path()
    token = load_token(token_path)
    if token and forge_url:
        try:
            username = ForgeClient(forge_url).get_authenticated_user(token)
        except MicrosubmitError:
            username = None

    if as_json:
        click.echo(
            json.dumps(
                {
                    "project": config.slug,
                    "upstream": str(config.upstream),
                    "root": str(root),
                    "authenticated": username is not None,
                    "username": username,
                }
            )
        )
    else:
        click.echo(f"project: {config.slug}")
        click.echo(f"upstream: {config.upstream}")
        click.echo(f"root: {root}")
        click.echo(f"auth: {username or 'anonymous'}")
    sys.exit(0)


if __name__ == "__main__":
    main()
