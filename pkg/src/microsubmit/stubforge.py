"""Hermetic local forge: REST API, OAuth and git smart-HTTP over bare repos.

Implements just enough of a GitHub-style surface for the client in
:mod:`microsubmit.forge` to run unmodified against it: ``GET /user``,
``GET /repos/{o}/{r}``, ``POST /repos/{o}/{r}/forks``,
``GET/POST /repos/{o}/{r}/pulls``, an HTML pull-request page, the OAuth
authorize/token pair, and git transport served by ``git http-backend``.
Every request is appended to a call log so tests can assert on traffic.
"""

from __future__ import annotations

import base64
import functools
import json
import logging
import re
import secrets
import shutil
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlencode, urlsplit

import click

from .errors import DuplicateRepo
from .forge import RepoSlug

logger = logging.getLogger(__name__)

_GIT_PATH_RE = re.compile(r"^/([^/]+)/([^/]+)\.git(/.*)?$")
_REPO_API_RE = re.compile(r"^/repos/([^/]+)/([^/]+)$")
_FORKS_API_RE = re.compile(r"^/repos/([^/]+)/([^/]+)/forks$")
_PULLS_API_RE = re.compile(r"^/repos/([^/]+)/([^/]+)/pulls$")
_PR_PAGE_RE = re.compile(r"^/([^/]+)/([^/]+)/pull/(\d+)$")


@functools.lru_cache(maxsize=1)
def _http_backend() -> str:
    exec_path = subprocess.run(
        ["git", "--exec-path"], capture_output=True, text=True, check=True
    ).stdout.strip()
    return str(Path(exec_path) / "git-http-backend")


def _git(args, cwd=None):
    proc = subprocess.run(["git", *args], cwd=cwd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"git {' '.join(args)} failed: {proc.stderr.strip()}")
    return proc.stdout


@dataclass
class LogEntry:
    method: str
    path: str
    ts: float


@dataclass
class StubPullRequest:
    number: int
    title: str
    body: str
    head_owner: str
    head_branch: str
    base_branch: str
    state: str = "open"
    html_url: str = ""

    def as_api_dict(self) -> dict:
        return {
            "number": self.number,
            "html_url": self.html_url,
            "title": self.title,
            "body": self.body,
            "state": self.state,
            "head": {
                "ref": self.head_branch,
                "label": f"{self.head_owner}:{self.head_branch}",
            },
            "base": {"ref": self.base_branch},
        }


@dataclass
class _Repo:
    slug: RepoSlug
    path: Path
    is_fork: bool = False
    ready_at: float = 0.0
    prs: list = field(default_factory=list)
    next_pr_number: int = 1


class StubForge:
    """In-process forge backed by bare repositories under ``root``.

    ``fork_delay`` simulates asynchronous forking: a freshly created fork
    rejects git transport (404) until the delay elapses, while the REST
    API reports it immediately, exactly like a large real forge.
    """

    def __init__(
        self,
        root: Path | str,
        client_id: str = "stub-client",
        client_secret: str = "stub-secret",
        oauth_user: str | None = None,
        fork_delay: float = 0.0,
    ):
        self.repo_root = Path(root)
        self.repo_root.mkdir(parents=True, exist_ok=True)
        self.client_id = client_id
        self.client_secret = client_secret
        self.oauth_user = oauth_user
        self.fork_delay = fork_delay
        self.lock = threading.RLock()
        self.repos: dict[str, _Repo] = {}
        self.users: dict[str, str] = {}  # token -> username
        self.codes: dict[str, str] = {}  # one-time oauth code -> username
        self.call_log: list[LogEntry] = []
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None
        self.base_url = ""

    # -- state management --------------------------------------------------

    def provision(self, upstream: RepoSlug, seed_tree: Path | str | None = None) -> Path:
        """Create the upstream bare repo seeded with ``seed_tree``'s files."""
        with self.lock:
            if str(upstream) in self.repos:
                raise DuplicateRepo(f"already provisioned: {upstream}")
            bare = self.repo_root / upstream.owner / f"{upstream.name}.git"
            bare.parent.mkdir(parents=True, exist_ok=True)
            _git(["init", "--bare", "-b", "main", str(bare)])
            _git(["config", "http.receivepack", "false"], cwd=bare)

            work = Path(tempfile.mkdtemp(prefix="stubforge-seed-"))
            try:
                if seed_tree is not None:
                    shutil.copytree(seed_tree, work, dirs_exist_ok=True)
                _git(["init", "-b", "main", str(work)])
                _git(["add", "-A"], cwd=work)
                _git(
                    [
                        "-c", "user.name=stub", "-c", "user.email=stub@localhost",
                        "commit", "--allow-empty", "-m", "initial import",
                    ],
                    cwd=work,
                )
                _git(["push", "-q", str(bare), "main"], cwd=work)
            finally:
                shutil.rmtree(work, ignore_errors=True)

            self.repos[str(upstream)] = _Repo(slug=upstream, path=bare)
            return bare

    def add_user(self, username: str) -> str:
        """Register a user and return a fresh API token for them."""
        token = secrets.token_hex(20)
        with self.lock:
            self.users[token] = username
            if self.oauth_user is None:
                self.oauth_user = username
        return token

    def _create_fork(self, upstream: _Repo, username: str) -> _Repo:
        fork_slug = RepoSlug(username, upstream.slug.name)
        with self.lock:
            existing = self.repos.get(str(fork_slug))
            if existing is not None:
                return existing
            bare = self.repo_root / username / f"{upstream.slug.name}.git"
            bare.parent.mkdir(parents=True, exist_ok=True)
            _git(["clone", "--bare", "-q", str(upstream.path), str(bare)])
            _git(["config", "http.receivepack", "true"], cwd=bare)
            fork = _Repo(
                slug=fork_slug,
                path=bare,
                is_fork=True,
                ready_at=time.monotonic() + self.fork_delay,
            )
            self.repos[str(fork_slug)] = fork
            return fork

    def default_branch(self, repo: _Repo) -> str:
        return _git(["symbolic-ref", "--short", "HEAD"], cwd=repo.path).strip()

    def branch_exists(self, repo: _Repo, branch: str) -> bool:
        proc = subprocess.run(
            ["git", "rev-parse", "--verify", "--quiet", f"refs/heads/{branch}"],
            cwd=repo.path,
            capture_output=True,
        )
        return proc.returncode == 0

    # -- call-log helpers ---------------------------------------------------

    def record_call(self, method: str, path: str) -> None:
        with self.lock:
            self.call_log.append(LogEntry(method, path, time.time()))

    def calls(self, method: str | None = None, path_re: str | None = None) -> list[LogEntry]:
        pattern = re.compile(path_re) if path_re else None
        with self.lock:
            return [
                entry
                for entry in self.call_log
                if (method is None or entry.method == method)
                and (pattern is None or pattern.search(entry.path))
            ]

    def assert_log(self, predicate) -> bool:
        with self.lock:
            return any(predicate(entry) for entry in self.call_log)

    def reset_log(self) -> None:
        with self.lock:
            self.call_log.clear()

    # -- server lifecycle ---------------------------------------------------

    def serve(self, host: str = "127.0.0.1", port: int = 0) -> str:
        """Start serving on a background thread; returns the base URL."""
        server = _StubServer((host, port), _StubHandler)
        server.stub = self
        self._server = server
        self.base_url = f"http://{host}:{server.server_address[1]}"
        self._thread = threading.Thread(target=server.serve_forever, daemon=True)
        self._thread.start()
        return self.base_url

    def shutdown(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None


class _StubServer(ThreadingHTTPServer):
    daemon_threads = True
    # tolerate bursts of parallel API and git requests without resets
    request_queue_size = 64


class _StubHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def stub(self) -> StubForge:
        return self.server.stub

    def log_message(self, fmt, *args):
        logger.debug("stubforge: " + fmt, *args)

    # -- plumbing ------------------------------------------------------------

    def _reply(self, status: int, body: bytes = b"", content_type: str = "text/plain", extra: dict | None = None):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for key, value in (extra or {}).items():
            self.send_header(key, value)
        self.end_headers()
        if body:
            self.wfile.write(body)

    def _reply_json(self, status: int, payload) -> None:
        self._reply(status, json.dumps(payload).encode(), "application/json")

    def _request_body(self) -> bytes:
        if self.headers.get("Transfer-Encoding", "").lower() == "chunked":
            chunks = []
            while True:
                size_line = self.rfile.readline()
                size = int(size_line.split(b";")[0].strip() or b"0", 16)
                if size == 0:
                    self.rfile.readline()
                    return b"".join(chunks)
                chunks.append(self.rfile.read(size))
                self.rfile.readline()
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def _api_user(self) -> str | None:
        """Username for an ``Authorization: token ...`` style header."""
        header = self.headers.get("Authorization", "")
        parts = header.split(None, 1)
        if len(parts) != 2 or parts[0].lower() not in ("token", "bearer"):
            return None
        return self.stub.users.get(parts[1].strip())

    def _basic_user(self) -> str | None:
        """Username for git transport's HTTP Basic credentials."""
        header = self.headers.get("Authorization", "")
        if not header.lower().startswith("basic "):
            return None
        try:
            decoded = base64.b64decode(header.split(None, 1)[1]).decode()
        except (ValueError, UnicodeDecodeError):
            return None
        _, _, password = decoded.partition(":")
        return self.stub.users.get(password)

    # -- dispatch --------------------------------------------------------------

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def _dispatch(self, method: str) -> None:
        parts = urlsplit(self.path)
        path, query = parts.path, parts.query
        self.stub.record_call(method, path)
        try:
            self._route(method, path, query)
        except BrokenPipeError:
            pass
        except Exception:
            logger.exception("stubforge handler error for %s %s", method, path)
            try:
                self._reply_json(500, {"message": "internal stub error"})
            except OSError:
                pass

    def _route(self, method: str, path: str, query: str) -> None:
        git_match = _GIT_PATH_RE.match(path)
        if git_match:
            return self._handle_git(method, path, query)

        if path == "/user" and method == "GET":
            return self._handle_user()
        if path == "/login/oauth/authorize" and method == "GET":
            return self._handle_authorize(query)
        if path == "/login/oauth/access_token" and method == "POST":
            return self._handle_token_exchange()

        match = _FORKS_API_RE.match(path)
        if match and method == "POST":
            return self._handle_fork(RepoSlug(match.group(1), match.group(2)))
        match = _PULLS_API_RE.match(path)
        if match:
            slug = RepoSlug(match.group(1), match.group(2))
            if method == "POST":
                return self._handle_open_pr(slug)
            return self._handle_list_prs(slug)
        match = _REPO_API_RE.match(path)
        if match and method == "GET":
            return self._handle_get_repo(RepoSlug(match.group(1), match.group(2)))
        match = _PR_PAGE_RE.match(path)
        if match and method == "GET":
            return self._handle_pr_page(
                RepoSlug(match.group(1), match.group(2)), int(match.group(3))
            )
        self._reply_json(404, {"message": "not found"})

    # -- REST API ---------------------------------------------------------------

    def _handle_user(self) -> None:
        username = self._api_user()
        if username is None:
            self._reply_json(401, {"message": "bad credentials"})
        else:
            self._reply_json(200, {"login": username})

    def _repo_api_dict(self, repo: _Repo) -> dict:
        return {
            "full_name": str(repo.slug),
            "name": repo.slug.name,
            "owner": {"login": repo.slug.owner},
            "fork": repo.is_fork,
            "default_branch": self.stub.default_branch(repo),
        }

    def _handle_get_repo(self, slug: RepoSlug) -> None:
        if self._api_user() is None:
            return self._reply_json(401, {"message": "bad credentials"})
        repo = self.stub.repos.get(str(slug))
        if repo is None:
            return self._reply_json(404, {"message": "not found"})
        self._reply_json(200, self._repo_api_dict(repo))

    def _handle_fork(self, upstream_slug: RepoSlug) -> None:
        username = self._api_user()
        if username is None:
            return self._reply_json(401, {"message": "bad credentials"})
        upstream = self.stub.repos.get(str(upstream_slug))
        if upstream is None:
            return self._reply_json(404, {"message": "not found"})
        fork = self.stub._create_fork(upstream, username)
        self._reply_json(202, self._repo_api_dict(fork))

    def _handle_list_prs(self, slug: RepoSlug) -> None:
        if self._api_user() is None:
            return self._reply_json(401, {"message": "bad credentials"})
        repo = self.stub.repos.get(str(slug))
        if repo is None:
            return self._reply_json(404, {"message": "not found"})
        with self.stub.lock:
            payload = [pr.as_api_dict() for pr in repo.prs]
        self._reply_json(200, payload)

    def _handle_open_pr(self, slug: RepoSlug) -> None:
        username = self._api_user()
        if username is None:
            return self._reply_json(401, {"message": "bad credentials"})
        base_repo = self.stub.repos.get(str(slug))
        if base_repo is None:
            return self._reply_json(404, {"message": "not found"})
        try:
            payload = json.loads(self._request_body() or b"{}")
        except json.JSONDecodeError:
            return self._reply_json(400, {"message": "invalid JSON"})

        title = (payload.get("title") or "").strip()
        body = payload.get("body") or ""
        head = payload.get("head") or ""
        base_branch = payload.get("base") or self.stub.default_branch(base_repo)
        head_owner, sep, head_branch = head.partition(":")
        if not title:
            return self._reply_json(422, {"message": "title cannot be blank"})
        if not sep or not head_owner or not head_branch:
            return self._reply_json(422, {"message": f"invalid head {head!r}"})
        head_repo = self.stub.repos.get(str(RepoSlug(head_owner, slug.name)))
        if head_repo is None or not self.stub.branch_exists(head_repo, head_branch):
            return self._reply_json(422, {"message": f"head {head!r} does not exist"})

        with self.stub.lock:
            for existing in base_repo.prs:
                if (
                    existing.state == "open"
                    and existing.head_owner == head_owner
                    and existing.head_branch == head_branch
                    and existing.base_branch == base_branch
                ):
                    return self._reply_json(
                        422, {"message": f"a pull request already exists for {head}"}
                    )
            number = base_repo.next_pr_number
            base_repo.next_pr_number += 1
            pr = StubPullRequest(
                number=number,
                title=title,
                body=body,
                head_owner=head_owner,
                head_branch=head_branch,
                base_branch=base_branch,
                html_url=f"{self.stub.base_url}/{slug.owner}/{slug.name}/pull/{number}",
            )
            base_repo.prs.append(pr)
        self._reply_json(201, pr.as_api_dict())

    def _handle_pr_page(self, slug: RepoSlug, number: int) -> None:
        repo = self.stub.repos.get(str(slug))
        if repo is None:
            return self._reply(404, b"no such repository", "text/html")
        with self.stub.lock:
            pr = next((p for p in repo.prs if p.number == number), None)
        if pr is None:
            return self._reply(404, b"no such pull request", "text/html")
        page = (
            f"<html><head><title>{pr.title} #{pr.number}</title></head><body>"
            f"<h1>{pr.title} <small>#{pr.number}</small></h1>"
            f"<p>{pr.head_owner}:{pr.head_branch} into {pr.base_branch}</p>"
            f"<pre>{pr.body}</pre></body></html>"
        )
        self._reply(200, page.encode(), "text/html")

    # -- OAuth -------------------------------------------------------------------

    def _handle_authorize(self, query: str) -> None:
        params = parse_qs(query)
        client_id = (params.get("client_id") or [""])[0]
        redirect_uri = (params.get("redirect_uri") or [""])[0]
        state = (params.get("state") or [""])[0]
        if client_id != self.stub.client_id:
            return self._reply_json(404, {"message": "unknown client_id"})
        if not redirect_uri:
            return self._reply_json(400, {"message": "redirect_uri required"})
        if self.stub.oauth_user is None:
            return self._reply_json(400, {"message": "no user configured for consent"})
        code = secrets.token_urlsafe(16)
        with self.stub.lock:
            self.stub.codes[code] = self.stub.oauth_user
        fragment = {"code": code}
        if state:
            fragment["state"] = state
        separator = "&" if "?" in redirect_uri else "?"
        location = f"{redirect_uri}{separator}{urlencode(fragment)}"
        self._reply(302, b"", "text/plain", extra={"Location": location})

    def _handle_token_exchange(self) -> None:
        form = parse_qs(self._request_body().decode("utf-8", "replace"))
        client_id = (form.get("client_id") or [""])[0]
        client_secret = (form.get("client_secret") or [""])[0]
        code = (form.get("code") or [""])[0]
        state = (form.get("state") or [""])[0]
        if client_id != self.stub.client_id or client_secret != self.stub.client_secret:
            return self._reply_json(400, {"error": "incorrect_client_credentials"})
        with self.stub.lock:
            username = self.stub.codes.pop(code, None)
            if username is None:
                return self._reply_json(400, {"error": "bad_verification_code"})
            token = secrets.token_hex(20)
            self.stub.users[token] = username
        payload = {"access_token": token, "token_type": "bearer", "scope": ""}
        if state:
            payload["state"] = state
        self._reply_json(200, payload)

    # -- git smart HTTP -----------------------------------------------------------

    def _handle_git(self, method: str, path: str, query: str) -> None:
        match = _GIT_PATH_RE.match(path)
        slug = RepoSlug(match.group(1), match.group(2))
        repo = self.stub.repos.get(str(slug))
        if repo is None or time.monotonic() < repo.ready_at:
            return self._reply(404, b"repository not found")

        username = self._basic_user()
        if username is None:
            return self._reply(
                401, b"authentication required", extra={"WWW-Authenticate": 'Basic realm="stub-forge"'}
            )
        wants_push = path.endswith("/git-receive-pack") or "service=git-receive-pack" in query
        if wants_push and username != repo.slug.owner:
            return self._reply(403, b"push is limited to the repository owner")

        body = self._request_body() if method == "POST" else b""
        env = {
            "GIT_PROJECT_ROOT": str(self.stub.repo_root),
            "GIT_HTTP_EXPORT_ALL": "1",
            "REQUEST_METHOD": method,
            "PATH_INFO": path,
            "QUERY_STRING": query,
            "REMOTE_USER": username,
            "REMOTE_ADDR": self.client_address[0],
            "CONTENT_TYPE": self.headers.get("Content-Type", ""),
            "CONTENT_LENGTH": str(len(body)),
            "GATEWAY_INTERFACE": "CGI/1.1",
            "SERVER_PROTOCOL": "HTTP/1.1",
            "PATH": "/usr/local/bin:/usr/bin:/bin",
        }
        for header, env_name in (
            ("Content-Encoding", "HTTP_CONTENT_ENCODING"),
            ("Git-Protocol", "HTTP_GIT_PROTOCOL"),
        ):
            if self.headers.get(header):
                env[env_name] = self.headers[header]

        proc = subprocess.run(
            [_http_backend()], input=body, env=env, capture_output=True, timeout=60
        )
        if proc.returncode != 0:
            logger.error("git http-backend failed: %s", proc.stderr.decode("utf-8", "replace"))
            return self._reply(500, b"git backend failure")

        header_blob, _, payload = proc.stdout.partition(b"\r\n\r\n")
        status = 200
        headers = []
        for raw_line in header_blob.split(b"\r\n"):
            name, _, value = raw_line.decode("latin-1").partition(":")
            value = value.strip()
            if name.lower() == "status":
                status = int(value.split()[0])
            elif name and value:
                headers.append((name, value))

        self.send_response(status)
        for name, value in headers:
            self.send_header(name, value)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        if payload:
            self.wfile.write(payload)


@click.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8030, show_default=True, type=int)
@click.option("--root", type=click.Path(file_okay=False), default=None, help="Directory for bare repositories (default: a fresh temp dir).")
@click.option("--user", "usernames", multiple=True, help="Provision a user; the first becomes the OAuth consent identity. Prints the token.")
@click.option("--provision", "provisions", multiple=True, metavar="OWNER/NAME=DIR", help="Provision an upstream repo from a seed directory.")
@click.option("--client-id", default="stub-client", show_default=True)
@click.option("--client-secret", default="stub-secret", show_default=True)
def main(host, port, root, usernames, provisions, client_id, client_secret):
    """Run a standalone stub forge for demos and manual testing."""
    root = Path(root) if root else Path(tempfile.mkdtemp(prefix="stubforge-"))
    stub = StubForge(root, client_id=client_id, client_secret=client_secret)
    for username in usernames:
        token = stub.add_user(username)
        click.echo(f"user {username}: token {token}")
    for spec_item in provisions:
        slug_text, _, seed = spec_item.partition("=")
        stub.provision(RepoSlug.parse(slug_text), seed or None)
        click.echo(f"provisioned {slug_text}")
    base_url = stub.serve(host, port)
    click.echo(f"stub forge at {base_url} (repos under {root})")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        stub.shutdown()


if __name__ == "__main__":
    main()
