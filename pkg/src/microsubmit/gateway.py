"""OAuth authorization-code proxy for dynamically-addressed clients.

A client session cannot receive the forge's OAuth callback directly (its
origin is not known at registration time), so a small gateway with a
static callback URL completes the code-for-token exchange and holds each
token for one-time pickup, keyed by the session's random ``state``.

Three pieces live here: the record store, the gateway HTTP server, and
the engine-side flow manager (:class:`AuthFlow`) that builds authorize
URLs and polls for results.
"""

from __future__ import annotations

import json
import logging
import secrets
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlencode, urlsplit

import click
import requests

from .errors import ConfigError, ExchangeFailed, ForgeUnreachable

logger = logging.getLogger(__name__)

STATE_BYTES = 32  # 256 bits -> 43 urlsafe chars
DEFAULT_TTL = 600.0
REQUEST_TIMEOUT = 10.0

# poll responses; unknown and not-yet-stored states share one object so
# the two cases cannot be told apart by probing
_PENDING = {"status": "pending"}
_GONE = {"status": "gone"}


def new_state() -> str:
    return secrets.token_urlsafe(STATE_BYTES)


@dataclass
class TokenRecord:
    token: str
    stored_at: float
    retrieved: bool = False


class TokenStore:
    """state -> token records with one-time retrieval and expiry.

    Token values are dropped at expiry; an empty tombstone is kept (for
    10 ttl) so an expired or consumed state answers "gone" rather than
    becoming indistinguishable from an unknown one.
    """

    def __init__(self, ttl: float = DEFAULT_TTL, clock=time.monotonic):
        self.ttl = ttl
        self._clock = clock
        self._lock = threading.Lock()
        self._records: dict[str, TokenRecord] = {}
        self._tombstones: dict[str, float] = {}  # state -> tombstone created_at

    def put(self, state: str, token: str) -> bool:
        """Store a token for ``state``; first write wins. Returns stored?"""
        now = self._clock()
        with self._lock:
            self._sweep(now)
            if state in self._records or state in self._tombstones:
                return False
            self._records[state] = TokenRecord(token=token, stored_at=now)
            return True

    def poll(self, state: str) -> dict:
        """One poll step: pending, one-time token delivery, or gone."""
        now = self._clock()
        with self._lock:
            self._sweep(now)
            record = self._records.get(state)
            if record is not None:
                # mark-retrieved is atomic with the read under the lock
                del self._records[state]
                self._tombstones[state] = now
                return {"status": "ok", "access_token": record.token}
            if state in self._tombstones:
                return dict(_GONE)
            return dict(_PENDING)

    def _sweep(self, now: float) -> None:
        for state, record in list(self._records.items()):
            if now - record.stored_at >= self.ttl:
                # drop the token value; remember only that the state existed
                del self._records[state]
                self._tombstones[state] = now
        for state, created in list(self._tombstones.items()):
            if now - created >= 10 * self.ttl:
                del self._tombstones[state]


class _GatewayServer(ThreadingHTTPServer):
    daemon_threads = True
    # many clients poll the same state at once; keep the accept backlog
    # above that burst so none are reset
    request_queue_size = 64


class Gateway:
    """The statically-registered callback host. Owns the client secret."""

    def __init__(
        self,
        forge_url: str,
        client_id: str,
        client_secret: str,
        ttl: float = DEFAULT_TTL,
    ):
        self.forge_url = forge_url.rstrip("/")
        self.client_id = client_id
        self.client_secret = client_secret
        self.store = TokenStore(ttl=ttl)
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None
        self.base_url = ""

    def exchange_code(self, code: str) -> str:
        """Trade an authorization code for an access token at the forge."""
        try:
            resp = requests.post(
                f"{self.forge_url}/login/oauth/access_token",
                data={
                    "client_id": self.client_id,
                    "client_secret": self.client_secret,
                    "code": code,
                },
                headers={"Accept": "application/json"},
                timeout=REQUEST_TIMEOUT,
            )
        except requests.RequestException as exc:
            raise ExchangeFailed(f"forge unreachable during exchange: {exc}") from exc
        if resp.status_code != 200:
            raise ExchangeFailed(f"forge rejected the code ({resp.status_code})")
        payload = resp.json()
        if "access_token" not in payload:
            raise ExchangeFailed(f"forge error: {payload.get('error', 'no token issued')}")
        return payload["access_token"]

    def handle_callback(self, code: str, state: str) -> tuple[int, str]:
        """Complete the exchange and store the record; returns (status, html)."""
        if not code or not state:
            return 400, _page("Missing parameters", "The callback URL is incomplete.")
        try:
            token = self.exchange_code(code)
        except ExchangeFailed as exc:
            logger.info("token exchange failed: %s", exc)
            return 502, _page("Sign-in failed", "The forge rejected this sign-in attempt. "
                                                "Close this page and try again.")
        self.store.put(state, token)
        return 200, _page("Signed in", "You can close this page and return to your session.")

    def serve(self, host: str = "127.0.0.1", port: int = 0) -> str:
        server = _GatewayServer((host, port), _GatewayHandler)
        server.gateway = self
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

    @property
    def callback_url(self) -> str:
        return f"{self.base_url}/callback"


def _page(title: str, message: str) -> str:
    return (
        "<!DOCTYPE html><html><head><title>{t}</title></head>"
        "<body><h1>{t}</h1><p>{m}</p></body></html>"
    ).format(t=title, m=message)


class _GatewayHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        logger.debug("gateway: " + fmt, *args)

    def _reply(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Cache-Control", "no-store")
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        gateway: Gateway = self.server.gateway
        parts = urlsplit(self.path)
        if parts.path != "/callback":
            return self._reply(404, b"not found", "text/plain")
        params = parse_qs(parts.query)
        code = (params.get("code") or [""])[0]
        state = (params.get("state") or [""])[0]
        status, html = gateway.handle_callback(code, state)
        self._reply(status, html.encode(), "text/html")

    def do_POST(self):
        gateway: Gateway = self.server.gateway
        if urlsplit(self.path).path != "/poll":
            return self._reply(404, b"not found", "text/plain")
        length = int(self.headers.get("Content-Length") or 0)
        try:
            payload = json.loads(self.rfile.read(length) or b"{}")
            state = payload["state"]
        except (json.JSONDecodeError, KeyError, TypeError):
            return self._reply(400, b'{"error":"state required"}', "application/json")
        result = gateway.store.poll(state)
        self._reply(200, json.dumps(result).encode(), "application/json")


class AuthFlow:
    """Engine-side flow manager: begin a flow, poll it, resolve usernames."""

    def __init__(self, forge_url: str, gateway_url: str, client_id: str, forge_client=None):
        if not forge_url or not gateway_url or not client_id:
            raise ConfigError("forge URL, gateway URL and client id are all required")
        self.forge_url = forge_url.rstrip("/")
        self.gateway_url = gateway_url.rstrip("/")
        self.client_id = client_id
        self._forge_client = forge_client
        self._status_cache: dict[str, tuple[str | None, float]] = {}
        self._cache_lock = threading.Lock()

    def begin_auth(self) -> tuple[str, str]:
        """Create a fresh state and the forge authorize URL embedding it."""
        state = new_state()
        query = urlencode(
            {
                "client_id": self.client_id,
                "redirect_uri": f"{self.gateway_url}/callback",
                "state": state,
            }
        )
        return state, f"{self.forge_url}/login/oauth/authorize?{query}"

    def poll_token(self, state: str) -> dict:
        """One gateway poll: {"status": "pending"|"gone"} or ok + token."""
        try:
            resp = requests.post(
                f"{self.gateway_url}/poll",
                json={"state": state},
                timeout=REQUEST_TIMEOUT,
            )
            resp.raise_for_status()
            return resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise ForgeUnreachable(f"gateway poll failed: {exc}") from exc

    def auth_status(self, token: str | None, max_age: float = 60.0) -> str | None:
        """Username for a held token, or None; cached for ``max_age`` seconds."""
        if not token:
            return None
        now = time.monotonic()
        with self._cache_lock:
            cached = self._status_cache.get(token)
            if cached is not None and now - cached[1] < max_age:
                return cached[0]
        username = self._resolve_username(token)
        with self._cache_lock:
            self._status_cache[token] = (username, now)
        return username

    def _resolve_username(self, token: str) -> str | None:
        from .errors import AuthError
        from .forge import ForgeClient

        client = self._forge_client or ForgeClient(self.forge_url)
        try:
            return client.get_authenticated_user(token)
        except (AuthError, ForgeUnreachable):
            return None


@click.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8040, show_default=True, type=int)
@click.option("--forge-url", envvar="MICROSUBMIT_FORGE_URL", required=True)
@click.option("--client-id", envvar="MICROSUBMIT_CLIENT_ID", required=True)
@click.option("--client-secret", envvar="MICROSUBMIT_CLIENT_SECRET", required=True)
@click.option("--ttl", default=DEFAULT_TTL, show_default=True, type=float, help="Seconds a stored token stays retrievable.")
def main(host, port, forge_url, client_id, client_secret, ttl):
    """Run the OAuth callback gateway."""
    gateway = Gateway(forge_url, client_id, client_secret, ttl=ttl)
    base_url = gateway.serve(host, port)
    click.echo(f"gateway at {base_url} (callback: {base_url}/callback)")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        gateway.shutdown()


if __name__ == "__main__":
    main()
