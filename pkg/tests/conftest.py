"""Shared fixtures: project trees, a live stub forge, gateway and service."""

from dataclasses import dataclass
from pathlib import Path

import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): named acceptance check")


@pytest.hookimpl(tryfirst=True, hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # expose per-phase outcomes so fixtures can report pass/fail at teardown
    outcome = yield
    report = outcome.get_result()
    setattr(item, "rep_" + report.when, report)
from fastapi.testclient import TestClient

from microsubmit.forge import ForgeClient, RepoSlug
from microsubmit.gateway import Gateway
from microsubmit.project import MANIFEST_NAME, ProjectConfig
from microsubmit.service import ServiceSettings, create_app
from microsubmit.stubforge import StubForge

SAMPLE_MANIFEST = """\
project:
  slug: ballet-predict-x
  package: predict_x
github:
  upstream: alice/ballet-predict-x
contrib:
  root: src/predict_x/features/contrib
  allowed_unbound: [df]
"""

CLIENT_ID = "stub-client"
CLIENT_SECRET = "stub-secret"

VALID_SNIPPET = (
    "import pandas as pd\n"
    "\n"
    "\n"
    "def feature(frame):\n"
    "    return pd.to_numeric(frame['age'], errors='coerce')\n"
)


@pytest.fixture
def sample_config():
    return ProjectConfig(
        slug="ballet-predict-x",
        package="predict_x",
        upstream=RepoSlug("alice", "ballet-predict-x"),
        contrib_root="src/predict_x/features/contrib",
        allowed_unbound=frozenset({"df"}),
    )


@pytest.fixture
def project_tree(tmp_path):
    """A checked-out project: manifest plus the package skeleton."""
    root = tmp_path / "ballet-predict-x"
    contrib = root / "src" / "predict_x" / "features" / "contrib"
    contrib.mkdir(parents=True)
    for relative in (
        "src/predict_x/__init__.py",
        "src/predict_x/features/__init__.py",
        "src/predict_x/features/contrib/__init__.py",
    ):
        (root / relative).touch()
    (root / MANIFEST_NAME).write_text(SAMPLE_MANIFEST, encoding="utf-8")
    (root / "README.md").write_text("# ballet-predict-x\n", encoding="utf-8")
    return root


@dataclass
class ForgeSetup:
    stub: StubForge
    client: ForgeClient
    bob_token: str
    upstream: RepoSlug

    @property
    def base_url(self) -> str:
        return self.stub.base_url


@pytest.fixture
def forge_setup(tmp_path, project_tree):
    """A served stub forge with alice/ballet-predict-x and user bob."""
    stub = StubForge(
        tmp_path / "forge-repos", client_id=CLIENT_ID, client_secret=CLIENT_SECRET
    )
    upstream = RepoSlug("alice", "ballet-predict-x")
    stub.provision(upstream, project_tree)
    bob_token = stub.add_user("bob")
    stub.serve()
    yield ForgeSetup(
        stub=stub,
        client=ForgeClient(stub.base_url),
        bob_token=bob_token,
        upstream=upstream,
    )
    stub.shutdown()


@pytest.fixture
def gateway_setup(forge_setup):
    """A served OAuth gateway wired to the stub forge."""
    gateway = Gateway(forge_setup.base_url, CLIENT_ID, CLIENT_SECRET)
    gateway.serve()
    yield gateway
    gateway.shutdown()


def make_service_settings(forge_setup, gateway_setup, project_tree, **overrides):
    base = dict(
        project_root=project_tree,
        forge_url=forge_setup.base_url,
        gateway_url=gateway_setup.base_url,
        client_id=CLIENT_ID,
    )
    base.update(overrides)
    return ServiceSettings(**base)


@pytest.fixture
def service_client(forge_setup, gateway_setup, project_tree):
    settings = make_service_settings(forge_setup, gateway_setup, project_tree)
    with TestClient(create_app(settings)) as client:
        yield client


def complete_oauth(client, expect_username="bob"):
    """Drive the full browser flow for a service TestClient session."""
    import requests

    started = client.get("/assemble/auth/authorize")
    assert started.status_code == 200
    authorize_url = started.json()["authorize_url"]
    # the "browser": follow forge authorize -> gateway callback
    page = requests.get(authorize_url, timeout=10)
    assert page.status_code == 200
    polled = client.get("/assemble/auth/token")
    assert polled.status_code == 200
    body = polled.json()
    assert body == {"status": "ok", "username": expect_username}
    return body["username"]


FIXTURES_DIR = Path(__file__).resolve().parent / "fixtures"
