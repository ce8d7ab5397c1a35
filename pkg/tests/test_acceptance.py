"""Acceptance gate: one test per release criterion, one printed line each.

Every test here drives the real stack (pipeline, service, gateway, stub
forge); nothing is mocked. Each prints ``acceptance [<name>]: PASS|FAIL``
so a log scrape shows the release posture at a glance.
"""

import ast
import json
import logging
import subprocess
import threading
import time

import pytest
import requests
from click.testing import CliRunner
from fastapi.testclient import TestClient

from microsubmit.analysis import Snippet, canonicalize, check_syntax
from microsubmit.cli import main as cli_main
from microsubmit.cli import store_token
from microsubmit.gateway import Gateway, new_state
from microsubmit.pipeline import SubmissionRequest, submit
from microsubmit.service import create_app
from microsubmit.telemetry import read_events

from .conftest import (
    CLIENT_ID,
    CLIENT_SECRET,
    FIXTURES_DIR,
    VALID_SNIPPET,
    complete_oauth,
    make_service_settings,
)
from .oracle import load_corpus, run_reference_oracle
from .test_corpus_oracle import classify_with_analyzer

CONTRIB_DIR = "src/predict_x/features/contrib"


@pytest.fixture(autouse=True)
def announce(request, capfd):
    yield
    marker = request.node.get_closest_marker("criterion")
    if marker is None:
        return
    report = getattr(request.node, "rep_call", None)
    status = "PASS" if report is not None and report.passed else "FAIL"
    with capfd.disabled():
        print(f"\nacceptance [{marker.args[0]}]: {status}", flush=True)


def upstream_pulls(forge_setup):
    resp = requests.get(
        f"{forge_setup.base_url}/repos/alice/ballet-predict-x/pulls",
        headers={"Authorization": f"token {forge_setup.bob_token}"},
        timeout=10,
    )
    resp.raise_for_status()
    return resp.json()


def checkout_branch(forge_setup, repo, branch, dest):
    path = forge_setup.stub.repos[repo].path
    subprocess.run(
        ["git", "clone", "--quiet", "--branch", branch, str(path), str(dest)],
        check=True, capture_output=True,
    )
    return dest


def merge_branch_into_upstream(forge_setup, branch):
    upstream = forge_setup.stub.repos["alice/ballet-predict-x"].path
    fork = forge_setup.stub.repos["bob/ballet-predict-x"].path
    subprocess.run(
        ["git", "-C", str(upstream), "fetch", str(fork),
         f"+refs/heads/{branch}:refs/heads/main"],
        check=True, capture_output=True,
    )


@pytest.mark.criterion("e2e-submission-flow")
def test_e2e_submission_flow(forge_setup, gateway_setup, project_tree, tmp_path):
    """Authenticated snippet submission lands as a well-formed PR in < 10 s."""
    settings = make_service_settings(forge_setup, gateway_setup, project_tree)
    with TestClient(create_app(settings)) as client:
        started = time.perf_counter()
        complete_oauth(client)
        resp = client.post("/assemble/submit", json={"code_content": VALID_SNIPPET})
        elapsed = time.perf_counter() - started

    assert elapsed < 10.0, f"end-to-end flow took {elapsed:.1f}s"
    assert resp.status_code == 200
    url = resp.json()["url"]

    # exactly one open PR on the upstream
    pulls = upstream_pulls(forge_setup)
    assert len(pulls) == 1
    assert pulls[0]["state"] == "open"
    head_branch = pulls[0]["head"]["ref"]

    # the head branch adds exactly the two planned files in one commit
    tree = checkout_branch(
        forge_setup, "bob/ballet-predict-x", head_branch, tmp_path / "head"
    )
    count = subprocess.run(
        ["git", "-C", str(tree), "rev-list", "--count", "origin/main..HEAD"],
        capture_output=True, text=True, check=True,
    )
    assert count.stdout.strip() == "1"
    changed = subprocess.run(
        ["git", "-C", str(tree), "diff", "--name-status", "origin/main..HEAD"],
        capture_output=True, text=True, check=True,
    )
    assert sorted(changed.stdout.split()) == sorted([
        "A", f"{CONTRIB_DIR}/user_bob/__init__.py",
        "A", f"{CONTRIB_DIR}/user_bob/feature.py",
    ])
    assert (tree / CONTRIB_DIR / "user_bob" / "__init__.py").read_bytes() == b""
    landed = (tree / CONTRIB_DIR / "user_bob" / "feature.py").read_bytes()
    assert landed == canonicalize(Snippet(VALID_SNIPPET)).encode()

    # the returned URL resolves to the stub's PR page
    page = requests.get(url, timeout=10)
    assert page.status_code == 200
    assert f"#{pulls[0]['number']}" in page.text


@pytest.mark.criterion("oracle-equivalence")
def test_oracle_equivalence():
    """Validator classification matches the reference interpreter on 100%."""
    cases = load_corpus()
    by_category = {}
    for case in cases:
        by_category.setdefault(case.category, []).append(case)
    assert len(cases) >= 30
    assert len(by_category["valid"]) >= 10
    assert len(by_category["syntax"]) >= 10
    assert len(by_category["unbound"]) >= 10

    oracle = run_reference_oracle(cases)
    mismatches = []
    for case in cases:
        truth = oracle[case.id]
        assert truth.other_error is None, f"{case.id}: oracle crashed: {truth.other_error}"
        verdict, _diagnostics = classify_with_analyzer(case)
        if verdict != truth.category:
            mismatches.append((case.id, verdict, truth.category))
    agreement = 1 - len(mismatches) / len(cases)
    assert agreement == 1.0, f"oracle disagreements: {mismatches}"


@pytest.mark.criterion("validation-gate")
def test_validation_gate(forge_setup, gateway_setup, tmp_path):
    """No invalid snippet submitted via the API causes any forge request."""
    # a project whose manifest allows no unbound names, so every seeded
    # corpus defect stays a defect when submitted through the service
    root = tmp_path / "gate-project"
    (root / "src" / "predict_x" / "features" / "contrib").mkdir(parents=True)
    (root / "ballet.yml").write_text(
        "project:\n"
        "  slug: ballet-predict-x\n"
        "  package: predict_x\n"
        "github:\n"
        "  upstream: alice/ballet-predict-x\n"
        "contrib:\n"
        "  root: src/predict_x/features/contrib\n",
        encoding="utf-8",
    )

    invalid_cases = [c for c in load_corpus() if c.category in ("syntax", "unbound")]
    assert len(invalid_cases) >= 20

    settings = make_service_settings(forge_setup, gateway_setup, root)
    with TestClient(create_app(settings)) as client:
        # sign in first so a gate failure would produce real forge traffic
        complete_oauth(client)
        forge_setup.stub.reset_log()
        for case in invalid_cases:
            resp = client.post("/assemble/submit", json={"code_content": case.source})
            assert resp.status_code == 422, f"{case.id} was not rejected"
            assert forge_setup.stub.call_log == [], f"{case.id} reached the forge"


@pytest.mark.criterion("canonicalization")
def test_canonicalization_properties():
    """Idempotence and parse preservation on every parseable corpus snippet."""
    parseable = [c for c in load_corpus() if not check_syntax(Snippet(c.source))]
    assert len(parseable) >= 20
    for case in parseable:
        once = canonicalize(Snippet(case.source))
        twice = canonicalize(Snippet(once))
        assert twice == once, f"{case.id}: canonicalize not idempotent"
        before = ast.dump(ast.parse(case.source))
        after = ast.dump(ast.parse(once))
        assert before == after, f"{case.id}: canonicalize changed the parse tree"


@pytest.mark.criterion("collision-policy")
def test_collision_policy(forge_setup, project_tree):
    """Three sequential merged submissions shift the filename, never overwrite."""
    filenames, branches, numbers = [], [], []
    for _ in range(3):
        result = submit(
            SubmissionRequest(
                snippet=Snippet(VALID_SNIPPET),
                token=forge_setup.bob_token,
                start_dir=project_tree,
            ),
            forge_setup.client,
        )
        filenames.append(result.created_files[-1].rsplit("/", 1)[-1])
        branches.append(result.branch)
        numbers.append(result.pr.number)
        merge_branch_into_upstream(forge_setup, result.branch)

    assert filenames == ["feature.py", "feature_2.py", "feature_3.py"]
    assert len(set(branches)) == 3
    assert len(set(numbers)) == 3
    assert len(upstream_pulls(forge_setup)) == 3


@pytest.mark.criterion("fork-idempotence")
def test_fork_idempotence(forge_setup, project_tree):
    """Two submissions by one user create at most one fork."""
    forge_setup.stub.reset_log()
    for _ in range(2):
        result = submit(
            SubmissionRequest(
                snippet=Snippet(VALID_SNIPPET),
                token=forge_setup.bob_token,
                start_dir=project_tree,
            ),
            forge_setup.client,
        )
        assert result.pr.number >= 1
    fork_creations = forge_setup.stub.calls("POST", r"/forks$")
    assert len(fork_creations) <= 1


@pytest.mark.criterion("oauth-state-machine")
def test_oauth_state_machine(forge_setup):
    """pending -> delivered exactly once -> gone; expiry and unknown states."""

    def complete_callback(gateway, state):
        authorize = requests.get(
            f"{forge_setup.base_url}/login/oauth/authorize",
            params={
                "client_id": CLIENT_ID,
                "redirect_uri": gateway.callback_url,
                "state": state,
            },
            allow_redirects=False,
            timeout=10,
        )
        landed = requests.get(authorize.headers["Location"], timeout=10)
        assert landed.status_code == 200

    def poll_raw(gateway, state):
        return requests.post(
            f"{gateway.base_url}/poll", json={"state": state}, timeout=10
        )

    gateway = Gateway(forge_setup.base_url, CLIENT_ID, CLIENT_SECRET)
    gateway.serve()
    try:
        state = new_state()

        # before the callback: pending; unknown state byte-identical to it
        pending = poll_raw(gateway, state)
        assert pending.json() == {"status": "pending"}
        unknown = poll_raw(gateway, new_state())
        assert unknown.content == pending.content

        complete_callback(gateway, state)

        # 16 concurrent pollers: the token is delivered exactly once
        results = []
        barrier = threading.Barrier(16)

        def poller():
            barrier.wait()
            results.append(poll_raw(gateway, state).json())

        threads = [threading.Thread(target=poller) for _ in range(16)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()

        delivered = [r for r in results if r["status"] == "ok"]
        assert len(delivered) == 1
        assert delivered[0]["access_token"]
        assert all(r == {"status": "gone"} for r in results if r["status"] != "ok")

        # any later poll stays gone
        assert poll_raw(gateway, state).json() == {"status": "gone"}
    finally:
        gateway.shutdown()

    # a completed flow whose token is never collected expires to gone
    short_lived = Gateway(forge_setup.base_url, CLIENT_ID, CLIENT_SECRET, ttl=1.0)
    short_lived.serve()
    try:
        state = new_state()
        complete_callback(short_lived, state)
        time.sleep(1.2)
        assert poll_raw(short_lived, state).json() == {"status": "gone"}
    finally:
        short_lived.shutdown()


@pytest.mark.criterion("token-secrecy")
def test_token_secrecy(forge_setup, gateway_setup, project_tree, tmp_path, caplog):
    """No client-visible byte of a full run ever contains a token value."""
    telemetry_path = tmp_path / "events.jsonl"
    settings = make_service_settings(
        forge_setup, gateway_setup, project_tree,
        telemetry_path=telemetry_path, telemetry_enabled=True,
    )
    surfaces = []

    def capture(resp):
        surfaces.append(resp.text)
        surfaces.append(json.dumps(dict(resp.headers)))
        return resp

    with caplog.at_level(logging.DEBUG):
        with TestClient(create_app(settings)) as client:
            started = capture(client.get("/assemble/auth/authorize"))
            browser = requests.get(started.json()["authorize_url"], timeout=10)
            surfaces.append(browser.text)
            for hop in browser.history:
                surfaces.append(json.dumps(dict(hop.headers)))
            capture(client.get("/assemble/auth/token"))
            capture(client.post("/assemble/submit", json={"code_content": VALID_SNIPPET}))
            capture(client.get("/assemble/status"))
            capture(client.post("/assemble/submit", json={"code_content": "def f(:\n"}))

    surfaces.append(telemetry_path.read_text(encoding="utf-8"))
    surfaces.append(caplog.text)
    surfaces.append(" ".join(f"{e.method} {e.path}" for e in forge_setup.stub.call_log))
    haystack = "\n".join(surfaces)

    tokens = set(forge_setup.stub.users)
    assert len(tokens) >= 2  # the seeded token plus the one minted by OAuth
    for token in tokens:
        assert token not in haystack, "a token value leaked into a visible surface"


@pytest.mark.criterion("telemetry-events")
def test_telemetry_events(forge_setup, gateway_setup, project_tree, tmp_path):
    """Exact per-outcome event sets when opted in; silence when opted out."""
    # success run
    success_sink = tmp_path / "success.jsonl"
    settings = make_service_settings(
        forge_setup, gateway_setup, project_tree,
        telemetry_path=success_sink, telemetry_enabled=True,
    )
    with TestClient(create_app(settings)) as client:
        complete_oauth(client)
        before = len(read_events(success_sink))
        resp = client.post("/assemble/submit", json={"code_content": VALID_SNIPPET})
        assert resp.status_code == 200
    success_kinds = [e["kind"] for e in read_events(success_sink)[before:]]
    assert success_kinds == ["submit_requested", "submit_succeeded"]

    # syntax-failure run in a fresh service with its own sink
    failure_sink = tmp_path / "failure.jsonl"
    settings = make_service_settings(
        forge_setup, gateway_setup, project_tree,
        telemetry_path=failure_sink, telemetry_enabled=True,
    )
    with TestClient(create_app(settings)) as client:
        resp = client.post("/assemble/submit", json={"code_content": "def f(:\n"})
        assert resp.status_code == 422
    failure_kinds = [e["kind"] for e in read_events(failure_sink)]
    assert failure_kinds == ["submit_requested", "validation_failed"]

    # opted-out run leaves no sink at all
    silent_sink = tmp_path / "silent.jsonl"
    settings = make_service_settings(
        forge_setup, gateway_setup, project_tree,
        telemetry_path=silent_sink, telemetry_enabled=False,
    )
    with TestClient(create_app(settings)) as client:
        complete_oauth(client)
        client.post("/assemble/submit", json={"code_content": VALID_SNIPPET})
        client.post("/assemble/submit", json={"code_content": "def f(:\n"})
    assert not silent_sink.exists()

    # both written sinks are line-delimited JSON with the full event shape
    for sink in (success_sink, failure_sink):
        for line in sink.read_text(encoding="utf-8").splitlines():
            event = json.loads(line)
            assert set(event) == {"ts", "session", "kind", "detail"}


@pytest.mark.criterion("cli-notebook-ingestion")
def test_cli_notebook_ingestion(forge_setup, project_tree, tmp_path):
    """--cell 1 submits the second code cell's exact source; bad index exits 5."""
    notebook = FIXTURES_DIR / "demo_notebook.ipynb"
    document = json.loads(notebook.read_text(encoding="utf-8"))
    code_cells = [c for c in document["cells"] if c["cell_type"] == "code"]
    expected = "".join(code_cells[1]["source"])
    # the fixture cell is already canonical, so landed bytes match verbatim
    assert canonicalize(Snippet(expected)) == expected

    token_file = tmp_path / "token"
    store_token(token_file, forge_setup.bob_token)
    runner = CliRunner()
    args = [
        "submit", str(notebook),
        "--forge-url", forge_setup.base_url,
        "--token-file", str(token_file),
        "--start-dir", str(project_tree),
    ]

    result = runner.invoke(cli_main, [*args, "--cell", "1"])
    assert result.exit_code == 0, result.output
    url = result.stdout.strip()
    assert requests.get(url, timeout=10).status_code == 200

    head_branch = upstream_pulls(forge_setup)[0]["head"]["ref"]
    tree = checkout_branch(
        forge_setup, "bob/ballet-predict-x", head_branch, tmp_path / "head"
    )
    landed = (tree / CONTRIB_DIR / "user_bob" / "feature.py").read_text(encoding="utf-8")
    assert landed == expected

    out_of_range = runner.invoke(cli_main, [*args, "--cell", "7"])
    assert out_of_range.exit_code == 5
    assert "out of range" in out_of_range.output
