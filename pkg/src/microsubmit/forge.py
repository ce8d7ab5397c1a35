"""Client for a GitHub-style forge: REST endpoints plus git-over-HTTP.

The client is parameterized by a single base URL hosting the API
(``/user``, ``/repos/...``), the git smart-HTTP transport
(``/{owner}/{name}.git``) and the OAuth endpoints, so the same code drives
a real forge or the local stub.
"""

from __future__ import annotations

import os
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING
from urllib.parse import urlsplit, urlunsplit

import requests

from .errors import (
    AuthError,
    BranchExists,
    ForgeUnreachable,
    ForkTimeout,
    GitTransportError,
    UpstreamMissing,
    ValidationRejected,
)

if TYPE_CHECKING:
    from .project import DestinationPlan

REQUEST_TIMEOUT = 10.0


@dataclass(frozen=True)
class RepoSlug:
    """An ``owner/name`` repository coordinate."""

    owner: str
    name: str

    def __post_init__(self):
        for part in (self.owner, self.name):
            if not part or "/" in part:
                raise ValueError(f"bad repo slug part: {part!r}")

    @classmethod
    def parse(cls, text: str) -> "RepoSlug":
        owner, sep, name = text.partition("/")
        if not sep:
            raise ValueError(f"repo slug must be owner/name, got {text!r}")
        return cls(owner, name)

    def __str__(self) -> str:
        return f"{self.owner}/{self.name}"


@dataclass(frozen=True)
class PullRequestRef:
    """An open pull request as reported by the forge."""

    number: int
    url: str
    head: tuple[RepoSlug, str]
    base: tuple[RepoSlug, str]
    title: str
    body: str


def _scrub(text: str, secret: str) -> str:
    """Remove a credential from text destined for errors or logs."""
    return text.replace(secret, "***") if secret else text


class ForgeClient:
    """Stateless operations against one forge. Safe to share across threads."""

    def __init__(self, base_url: str, fork_wait: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.fork_wait = fork_wait

    # -- REST ----------------------------------------------------------

    def _request(self, method: str, path: str, token: str, **kwargs) -> requests.Response:
        headers = {"Authorization": f"token {token}", "Accept": "application/json"}
        try:
            resp = requests.request(
                method, f"{self.base_url}{path}", headers=headers,
                timeout=REQUEST_TIMEOUT, **kwargs,
            )
        except requests.RequestException as exc:
            raise ForgeUnreachable(_scrub(str(exc), token)) from None
        if resp.status_code == 401:
            raise AuthError(f"{method} {path}: forge rejected token")
        if resp.status_code >= 500:
            raise ForgeUnreachable(f"{method} {path}: {resp.status_code}")
        return resp

    def get_authenticated_user(self, token: str) -> str:
        resp = self._request("GET", "/user", token)
        resp.raise_for_status()
        return resp.json()["login"]

    def get_repo(self, slug: RepoSlug, token: str) -> dict | None:
        resp = self._request("GET", f"/repos/{slug.owner}/{slug.name}", token)
        if resp.status_code == 404:
            return None
        resp.raise_for_status()
        return resp.json()

    def default_branch(self, slug: RepoSlug, token: str) -> str:
        repo = self.get_repo(slug, token)
        if repo is None:
            raise UpstreamMissing(f"no such repository: {slug}")
        return repo.get("default_branch", "main")

    def ensure_fork(self, token: str, upstream: RepoSlug) -> RepoSlug:
        """Fork ``upstream`` for the token's user, or reuse an existing fork.

        Idempotent: no fork-creation request is issued when the fork already
        exists. Blocks until the fork is clonable or the wait budget runs out.
        """
        username = self.get_authenticated_user(token)
        fork = RepoSlug(username, upstream.name)
        if self.get_repo(fork, token) is not None:
            return fork
        resp = self._request("POST", f"/repos/{upstream.owner}/{upstream.name}/forks", token)
        if resp.status_code == 404:
            raise UpstreamMissing(f"no such repository: {upstream}")
        resp.raise_for_status()
        self._wait_clonable(fork, token)
        return fork

    def _wait_clonable(self, fork: RepoSlug, token: str) -> None:
        # Real forges fork asynchronously; poll with exponential backoff.
        deadline = time.monotonic() + self.fork_wait
        delay = 0.05
        while True:
            if self.get_repo(fork, token) is not None and self._ls_remote_ok(fork, token):
                return
            if time.monotonic() >= deadline:
                raise ForkTimeout(f"fork {fork} not clonable after {self.fork_wait}s")
            time.sleep(delay)
            delay = min(delay * 2, 2.0)

    def open_pull_request(
        self,
        token: str,
        base: RepoSlug,
        head: tuple[RepoSlug, str],
        title: str,
        body: str,
    ) -> PullRequestRef:
        head_repo, head_branch = head
        base_branch = self.default_branch(base, token)
        resp = self._request(
            "POST",
            f"/repos/{base.owner}/{base.name}/pulls",
            token,
            json={
                "title": title,
                "body": body,
                "head": f"{head_repo.owner}:{head_branch}",
                "base": base_branch,
            },
        )
        if resp.status_code == 422:
            raise ValidationRejected(f"forge rejected pull request: {resp.text}")
        resp.raise_for_status()
        data = resp.json()
        return PullRequestRef(
            number=data["number"],
            url=data["html_url"],
            head=(head_repo, head_branch),
            base=(base, base_branch),
            title=title,
            body=body,
        )

    # -- git transport ---------------------------------------------------

    def _clone_url(self, slug: RepoSlug, token: str) -> str:
        scheme, netloc, path, _, _ = urlsplit(self.base_url)
        netloc = f"x-access-token:{token}@{netloc}"
        return urlunsplit((scheme, netloc, f"{path}/{slug.owner}/{slug.name}.git", "", ""))

    def _git(self, args: list[str], token: str, cwd: Path | None = None, step: str = "clone") -> str:
        env = dict(os.environ, GIT_TERMINAL_PROMPT="0", GIT_CONFIG_NOSYSTEM="1")
        proc = subprocess.run(
            ["git", *args], cwd=cwd, capture_output=True, text=True, env=env,
        )
        if proc.returncode != 0:
            message = _scrub(proc.stderr.strip() or proc.stdout.strip(), token)
            raise GitTransportError(f"git {args[0]} failed: {message}", step=step)
        return proc.stdout

    def _ls_remote_ok(self, slug: RepoSlug, token: str) -> bool:
        try:
            self._git(["ls-remote", self._clone_url(slug, token)], token)
            return True
        except GitTransportError:
            return False

    def list_branches(self, slug: RepoSlug, token: str) -> set[str]:
        out = self._git(["ls-remote", "--heads", self._clone_url(slug, token)], token)
        branches = set()
        for line in out.splitlines():
            _, _, ref = line.partition("\t")
            if ref.startswith("refs/heads/"):
                branches.add(ref[len("refs/heads/"):])
        return branches

    def clone_to_temp(self, fork: RepoSlug, token: str) -> Path:
        """Clone the fork's default branch into a fresh temporary directory.

        The caller owns cleanup of the returned directory.
        """
        workdir = Path(tempfile.mkdtemp(prefix="microsubmit-"))
        try:
            self._git(["clone", "--quiet", self._clone_url(fork, token), str(workdir)], token)
        except GitTransportError:
            shutil.rmtree(workdir, ignore_errors=True)
            raise
        return workdir

    def sync_with_upstream(self, working_tree: Path, upstream: RepoSlug, token: str) -> None:
        """Advance the checkout to the upstream default head if it moved.

        An existing fork's default branch may lag upstream; submissions are
        planned and branched against current upstream content. The fork's
        own default branch is never pushed to.
        """
        url = self._clone_url(upstream, token)
        self._git(["fetch", "--quiet", url], token, cwd=working_tree)
        head = self._git(["rev-parse", "HEAD"], token, cwd=working_tree).strip()
        fetched = self._git(["rev-parse", "FETCH_HEAD"], token, cwd=working_tree).strip()
        if head != fetched:
            self._git(["reset", "-q", "--hard", "FETCH_HEAD"], token, cwd=working_tree, step="clone")

    def commit_and_push(
        self,
        working_tree: Path,
        plan: "DestinationPlan",
        content: str,
        branch: str,
        author: tuple[str, str],
        token: str,
    ) -> str:
        """Create the planned files in one commit on a new branch and push it.

        Raises :class:`BranchExists` if the fork already has ``branch``.
        Returns the commit id.
        """
        origin = self._git(["remote", "get-url", "origin"], token, cwd=working_tree).strip()
        if branch in self.list_branches_from_url(origin, token):
            raise BranchExists(f"branch {branch!r} already on fork")

        for rel in plan.package_init_files:
            target = working_tree / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.touch()
        feature = working_tree / plan.feature_file
        feature.parent.mkdir(parents=True, exist_ok=True)
        feature.write_text(content, encoding="utf-8", newline="")

        name, email = author
        self._git(["checkout", "--quiet", "-b", branch], token, cwd=working_tree, step="commit")
        self._git(["add", "--", *plan.package_init_files, plan.feature_file], token,
                  cwd=working_tree, step="commit")
        self._git(
            ["-c", f"user.name={name}", "-c", f"user.email={email}",
             "commit", "--quiet", "-m", f"Add {Path(plan.feature_file).name}",
             f"--author={name} <{email}>"],
            token, cwd=working_tree, step="commit",
        )
        self._git(["push", "--quiet", "origin", branch], token, cwd=working_tree, step="push")
        return self._git(["rev-parse", "HEAD"], token, cwd=working_tree).strip()

    def list_branches_from_url(self, url: str, token: str) -> set[str]:
        out = self._git(["ls-remote", "--heads", url], token)
        return {
            line.partition("\t")[2][len("refs/heads/"):]
            for line in out.splitlines()
            if line.partition("\t")[2].startswith("refs/heads/")
        }
