"""End-to-end submission orchestration: snippet in, pull request out.

One call performs what is otherwise a manual fork + clone + branch +
write + commit + push + PR sequence. Validation always runs before any
forge traffic, so an invalid snippet produces zero network requests.
"""

from __future__ import annotations

import getpass
import logging
import shutil
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import urlsplit

from .analysis import Snippet, ValidationReport, canonicalize, validate
from .errors import (
    AuthError,
    AuthRequired,
    BranchExists,
    ForgeUnreachable,
    GitTransportError,
    MicrosubmitError,
    PipelineError,
    ValidationFailed,
)
from .forge import ForgeClient, PullRequestRef, RepoSlug
from .project import (
    DestinationPlan,
    ProjectConfig,
    discover_project,
    plan_destination,
    sanitize_username,
)

logger = logging.getLogger(__name__)

# branch-name allocation is serialized per (user, upstream) so concurrent
# submissions from one user cannot pick the same k
_branch_locks: dict[tuple[str, str], threading.Lock] = {}
_locks_guard = threading.Lock()


def _branch_lock(username: str, upstream: RepoSlug) -> threading.Lock:
    with _locks_guard:
        return _branch_locks.setdefault((username, str(upstream)), threading.Lock())


@dataclass(frozen=True)
class SubmissionRequest:
    snippet: Snippet
    token: str | None
    start_dir: Path | str = "."
    dry_run: bool = False


@dataclass(frozen=True)
class SubmissionResult:
    pr: PullRequestRef
    branch: str
    created_files: tuple[str, ...]
    validation: ValidationReport
    elapsed_ms: int


def default_description(snippet: Snippet, config: ProjectConfig, username: str) -> str:
    """Deterministic PR body: project, fenced snippet, automation marker."""
    canonical = canonicalize(snippet)
    return (
        f"Automated contribution to **{config.slug}** for @{username}.\n"
        "\n"
        "```python\n"
        f"{canonical}"
        "```\n"
        "\n"
        "Submitted via micro-submission engine\n"
    )


def _author_email(username: str, forge: ForgeClient) -> str:
    host = urlsplit(forge.base_url).hostname or "localhost"
    return f"{username}@users.noreply.{host}"


def _allocate_branch(existing: set[str], prefix: str, user: str) -> str:
    k = 1
    while f"{prefix}-{user}-{k}" in existing:
        k += 1
    return f"{prefix}-{user}-{k}"


def _fail(stage: str, exc: Exception) -> PipelineError:
    logger.info("submission failed at stage %s: %s", stage, exc)
    return PipelineError(stage, exc)


def submit(
    request: SubmissionRequest,
    forge: ForgeClient,
    config_override: ProjectConfig | None = None,
) -> SubmissionResult:
    """Run the full submission flow for one snippet.

    Raises ValidationFailed (with the report attached) before any forge
    call when the snippet does not validate; AuthRequired when no token
    is present; and PipelineError with a stage name (fork, clone, commit,
    push or pr) for downstream failures. The temporary working tree is
    removed on every exit path.
    """
    started = time.monotonic()

    if config_override is not None:
        config, project_root = config_override, Path(request.start_dir)
    else:
        config, project_root = discover_project(request.start_dir)

    report = validate(request.snippet, config)
    if not report.ok:
        raise ValidationFailed(report)

    if request.dry_run:
        return _plan_only(request, forge, config, project_root, report, started)

    if not request.token:
        raise AuthRequired("submission requires an authenticated session")

    try:
        username = forge.get_authenticated_user(request.token)
    except AuthError:
        raise AuthRequired("forge rejected the session token") from None
    except ForgeUnreachable as exc:
        raise _fail("fork", exc) from exc

    try:
        fork = forge.ensure_fork(request.token, config.upstream)
    except MicrosubmitError as exc:
        raise _fail("fork", exc) from exc

    try:
        tree = forge.clone_to_temp(fork, request.token)
    except MicrosubmitError as exc:
        raise _fail("clone", exc) from exc

    try:
        try:
            forge.sync_with_upstream(tree, config.upstream, request.token)
        except MicrosubmitError as exc:
            raise _fail("clone", exc) from exc

        plan = plan_destination(config, username, tree)
        user = sanitize_username(username)

        with _branch_lock(username, config.upstream):
            try:
                taken = forge.list_branches(fork, request.token)
                branch = _allocate_branch(taken, config.branch_prefix, user)
                forge.commit_and_push(
                    tree,
                    plan,
                    report.canonical_source,
                    branch,
                    (username, _author_email(username, forge)),
                    request.token,
                )
            except BranchExists as exc:
                raise _fail("commit", exc) from exc
            except GitTransportError as exc:
                raise _fail(exc.step, exc) from exc
            except MicrosubmitError as exc:
                raise _fail("push", exc) from exc

        try:
            pr = forge.open_pull_request(
                request.token,
                config.upstream,
                (fork, branch),
                f"Add {config.filename_base} by {username}",
                default_description(request.snippet, config, username),
            )
        except MicrosubmitError as exc:
            raise _fail("pr", exc) from exc
    finally:
        shutil.rmtree(tree, ignore_errors=True)

    return SubmissionResult(
        pr=pr,
        branch=branch,
        created_files=(*plan.package_init_files, plan.feature_file),
        validation=report,
        elapsed_ms=int((time.monotonic() - started) * 1000),
    )


def _plan_only(
    request: SubmissionRequest,
    forge: ForgeClient,
    config: ProjectConfig,
    project_root: Path,
    report: ValidationReport,
    started: float,
) -> SubmissionResult:
    """Dry run: plan against the local project tree, no writes, no push.

    Uses the forge login when a token is at hand, falling back to the OS
    user so dry runs also work fully offline. The returned PR is a
    sentinel (number 0, empty URL).
    """
    username = None
    if request.token:
        try:
            username = forge.get_authenticated_user(request.token)
        except (AuthError, ForgeUnreachable):
            username = None
    if username is None:
        username = getpass.getuser()

    plan = plan_destination(config, username, project_root)
    user = sanitize_username(username)
    branch = f"{config.branch_prefix}-{user}-1"
    pr = PullRequestRef(
        number=0,
        url="",
        head=(RepoSlug(user, config.upstream.name), branch),
        base=(config.upstream, "main"),
        title=f"Add {config.filename_base} by {username}",
        body=default_description(request.snippet, config, username),
    )
    return SubmissionResult(
        pr=pr,
        branch=branch,
        created_files=(*plan.package_init_files, plan.feature_file),
        validation=report,
        elapsed_ms=int((time.monotonic() - started) * 1000),
    )
