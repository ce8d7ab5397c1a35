"""Opt-in usage event capture to a JSON-lines file sink.

Recording is a no-op unless the user opted in. Sink problems are logged
and swallowed; telemetry must never break or block the flow it observes.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from .errors import SinkError

logger = logging.getLogger(__name__)


class EventKind(str, Enum):
    AUTH_STARTED = "auth_started"
    AUTH_COMPLETED = "auth_completed"
    SUBMIT_REQUESTED = "submit_requested"
    VALIDATION_FAILED = "validation_failed"
    SUBMIT_SUCCEEDED = "submit_succeeded"
    SUBMIT_FAILED = "submit_failed"


@dataclass(frozen=True)
class TelemetryEvent:
    ts: str
    session: str
    kind: EventKind
    detail: dict = field(default_factory=dict)

    def as_json_line(self) -> str:
        payload = {
            "ts": self.ts,
            "session": self.session,
            "kind": self.kind.value,
            "detail": self.detail,
        }
        return json.dumps(payload, separators=(",", ":"), sort_keys=True)


class Telemetry:
    """Append-only event writer; one instance per sink file.

    Appends are serialized through an instance lock so concurrent
    submissions cannot interleave partial lines.
    """

    def __init__(self, path: Path | str | None = None, enabled: bool = False):
        self.path = Path(path) if path is not None else None
        self.enabled = bool(enabled) and self.path is not None
        self._lock = threading.Lock()

    def record(self, kind: EventKind | str, session: str, detail: dict | None = None) -> None:
        """Write one event line iff opted in; never raises."""
        if not self.enabled:
            return
        try:
            event = TelemetryEvent(
                ts=datetime.now(timezone.utc).isoformat(),
                session=session,
                kind=EventKind(kind),
                detail={str(k): str(v) for k, v in (detail or {}).items()},
            )
            self._append(event.as_json_line())
        except (SinkError, ValueError) as exc:
            logger.warning("telemetry event dropped: %s", exc)

    def _append(self, line: str) -> None:
        with self._lock:
            try:
                with self.path.open("a", encoding="utf-8") as sink:
                    sink.write(line + "\n")
            except OSError as exc:
                raise SinkError(str(exc)) from exc


def read_events(path: Path | str) -> list[dict]:
    """Parse a sink file back into event dicts (one JSON document per line)."""
    events = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            events.append(json.loads(line))
    return events
