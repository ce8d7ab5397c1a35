"""Contract tests for the hermetic stub forge."""

import subprocess

import pytest
import requests

from microsubmit.errors import DuplicateRepo
from microsubmit.forge import RepoSlug

from .conftest import CLIENT_ID, CLIENT_SECRET


def api(setup, method, path, token=None, **kwargs):
    headers = {"Authorization": f"token {token}"} if token else {}
    return requests.request(
        method, f"{setup.base_url}{path}", headers=headers, timeout=10, **kwargs
    )


def test_user_endpoint_roundtrip(forge_setup):
    resp = api(forge_setup, "GET", "/user", forge_setup.bob_token)
    assert resp.status_code == 200
    assert resp.json() == {"login": "bob"}


def test_unknown_token_is_401(forge_setup):
    assert api(forge_setup, "GET", "/user", "bogus").status_code == 401
    assert api(forge_setup, "GET", "/user").status_code == 401


def test_get_repo_and_404(forge_setup):
    resp = api(forge_setup, "GET", "/repos/alice/ballet-predict-x", forge_setup.bob_token)
    assert resp.status_code == 200
    body = resp.json()
    assert body["full_name"] == "alice/ballet-predict-x"
    assert body["default_branch"] == "main"
    assert body["fork"] is False
    assert api(forge_setup, "GET", "/repos/alice/nope", forge_setup.bob_token).status_code == 404


def test_duplicate_provision_rejected(forge_setup):
    with pytest.raises(DuplicateRepo):
        forge_setup.stub.provision(RepoSlug("alice", "ballet-predict-x"))


def test_provision_empty_seed_gives_single_commit(forge_setup, tmp_path):
    bare = forge_setup.stub.provision(RepoSlug("alice", "empty-repo"))
    out = subprocess.run(
        ["git", "-C", str(bare), "rev-list", "--count", "main"],
        capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "1"


def test_fork_creates_repo_under_user(forge_setup):
    resp = api(forge_setup, "POST", "/repos/alice/ballet-predict-x/forks", forge_setup.bob_token)
    assert resp.status_code == 202
    assert resp.json()["full_name"] == "bob/ballet-predict-x"
    assert resp.json()["fork"] is True
    # now visible via GET
    again = api(forge_setup, "GET", "/repos/bob/ballet-predict-x", forge_setup.bob_token)
    assert again.status_code == 200


def test_fork_unknown_upstream_404(forge_setup):
    resp = api(forge_setup, "POST", "/repos/alice/missing/forks", forge_setup.bob_token)
    assert resp.status_code == 404


def test_call_log_grows_by_one_per_request(forge_setup):
    before = len(forge_setup.stub.call_log)
    api(forge_setup, "GET", "/user", forge_setup.bob_token)
    api(forge_setup, "GET", "/repos/alice/ballet-predict-x", forge_setup.bob_token)
    assert len(forge_setup.stub.call_log) == before + 2
    assert forge_setup.stub.assert_log(lambda e: e.method == "GET" and e.path == "/user")


def test_call_log_never_contains_tokens_or_query(forge_setup):
    requests.get(
        f"{forge_setup.base_url}/login/oauth/authorize",
        params={"client_id": CLIENT_ID, "redirect_uri": "http://x/cb", "state": "sekrit"},
        allow_redirects=False,
        timeout=10,
    )
    api(forge_setup, "GET", "/user", forge_setup.bob_token)
    joined = " ".join(entry.path for entry in forge_setup.stub.call_log)
    assert forge_setup.bob_token not in joined
    assert "sekrit" not in joined


def test_oauth_flow_yields_token_accepted_by_user_endpoint(forge_setup):
    authorize = requests.get(
        f"{forge_setup.base_url}/login/oauth/authorize",
        params={
            "client_id": CLIENT_ID,
            "redirect_uri": "http://127.0.0.1:1/callback",
            "state": "abc123",
        },
        allow_redirects=False,
        timeout=10,
    )
    assert authorize.status_code == 302
    location = authorize.headers["Location"]
    assert location.startswith("http://127.0.0.1:1/callback?")
    assert "state=abc123" in location
    code = location.split("code=")[1].split("&")[0]

    exchanged = requests.post(
        f"{forge_setup.base_url}/login/oauth/access_token",
        data={"client_id": CLIENT_ID, "client_secret": CLIENT_SECRET, "code": code},
        headers={"Accept": "application/json"},
        timeout=10,
    )
    assert exchanged.status_code == 200
    token = exchanged.json()["access_token"]
    assert api(forge_setup, "GET", "/user", token).json() == {"login": "bob"}


def test_oauth_code_is_single_use(forge_setup):
    authorize = requests.get(
        f"{forge_setup.base_url}/login/oauth/authorize",
        params={"client_id": CLIENT_ID, "redirect_uri": "http://127.0.0.1:1/cb", "state": "s"},
        allow_redirects=False,
        timeout=10,
    )
    code = authorize.headers["Location"].split("code=")[1].split("&")[0]
    form = {"client_id": CLIENT_ID, "client_secret": CLIENT_SECRET, "code": code}
    first = requests.post(f"{forge_setup.base_url}/login/oauth/access_token", data=form, timeout=10)
    second = requests.post(f"{forge_setup.base_url}/login/oauth/access_token", data=form, timeout=10)
    assert first.status_code == 200
    assert second.status_code == 400
    assert second.json()["error"] == "bad_verification_code"


def test_oauth_bad_client_secret_rejected(forge_setup):
    resp = requests.post(
        f"{forge_setup.base_url}/login/oauth/access_token",
        data={"client_id": CLIENT_ID, "client_secret": "wrong", "code": "whatever"},
        timeout=10,
    )
    assert resp.status_code == 400


def test_unknown_client_id_on_authorize(forge_setup):
    resp = requests.get(
        f"{forge_setup.base_url}/login/oauth/authorize",
        params={"client_id": "who", "redirect_uri": "http://x/cb", "state": "s"},
        allow_redirects=False,
        timeout=10,
    )
    assert resp.status_code == 404


def test_pull_request_schema_rules(forge_setup):
    token = forge_setup.bob_token
    api(forge_setup, "POST", "/repos/alice/ballet-predict-x/forks", token)

    # empty title
    resp = api(
        forge_setup, "POST", "/repos/alice/ballet-predict-x/pulls", token,
        json={"title": "  ", "body": "b", "head": "bob:main", "base": "main"},
    )
    assert resp.status_code == 422

    # malformed head
    resp = api(
        forge_setup, "POST", "/repos/alice/ballet-predict-x/pulls", token,
        json={"title": "t", "body": "b", "head": "nocolon", "base": "main"},
    )
    assert resp.status_code == 422

    # head branch that does not exist
    resp = api(
        forge_setup, "POST", "/repos/alice/ballet-predict-x/pulls", token,
        json={"title": "t", "body": "b", "head": "bob:ghost-branch", "base": "main"},
    )
    assert resp.status_code == 422

    # valid PR from the fork's default branch
    resp = api(
        forge_setup, "POST", "/repos/alice/ballet-predict-x/pulls", token,
        json={"title": "t", "body": "b", "head": "bob:main", "base": "main"},
    )
    assert resp.status_code == 201
    body = resp.json()
    assert body["number"] == 1
    assert body["html_url"].endswith("/alice/ballet-predict-x/pull/1")

    # listing shows it open
    listing = api(forge_setup, "GET", "/repos/alice/ballet-predict-x/pulls", token)
    assert [pr["number"] for pr in listing.json()] == [1]
    assert listing.json()[0]["state"] == "open"

    # PR page resolves as HTML
    page = requests.get(body["html_url"], timeout=10)
    assert page.status_code == 200
    assert "text/html" in page.headers["Content-Type"]

    # unknown PR page is 404
    missing = requests.get(f"{forge_setup.base_url}/alice/ballet-predict-x/pull/99", timeout=10)
    assert missing.status_code == 404


def test_pr_numbers_increase_per_upstream(forge_setup, tmp_path):
    token = forge_setup.bob_token
    api(forge_setup, "POST", "/repos/alice/ballet-predict-x/forks", token)
    fork_path = forge_setup.stub.repos["bob/ballet-predict-x"].path

    # create two branches directly in the fork's bare repo
    for branch in ("b1", "b2"):
        subprocess.run(
            ["git", "-C", str(fork_path), "branch", branch, "main"],
            check=True, capture_output=True,
        )
    first = api(
        forge_setup, "POST", "/repos/alice/ballet-predict-x/pulls", token,
        json={"title": "one", "body": "", "head": "bob:b1", "base": "main"},
    )
    second = api(
        forge_setup, "POST", "/repos/alice/ballet-predict-x/pulls", token,
        json={"title": "two", "body": "", "head": "bob:b2", "base": "main"},
    )
    assert (first.json()["number"], second.json()["number"]) == (1, 2)


def test_push_to_upstream_is_rejected(forge_setup, tmp_path):
    client, token = forge_setup.client, forge_setup.bob_token
    tree = client.clone_to_temp(forge_setup.upstream, token)
    try:
        (tree / "hack.txt").write_text("nope\n")
        subprocess.run(["git", "-C", str(tree), "add", "hack.txt"], check=True, capture_output=True)
        subprocess.run(
            ["git", "-C", str(tree), "-c", "user.name=x", "-c", "user.email=x@x", "commit", "-qm", "hack"],
            check=True, capture_output=True,
        )
        pushed = subprocess.run(
            ["git", "-C", str(tree), "push", "origin", "main"],
            capture_output=True, text=True,
            env={"GIT_TERMINAL_PROMPT": "0", "PATH": "/usr/bin:/bin"},
        )
        assert pushed.returncode != 0
    finally:
        import shutil

        shutil.rmtree(tree, ignore_errors=True)
