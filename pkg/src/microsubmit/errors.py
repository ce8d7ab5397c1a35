"""Exception types shared across the package."""

from __future__ import annotations


class MicrosubmitError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(MicrosubmitError):
    """A manifest document could not be parsed at all."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class SchemaError(MicrosubmitError):
    """A manifest parsed but is missing a key or violates an invariant."""

    def __init__(self, key: str, message: str | None = None):
        super().__init__(message or f"invalid or missing manifest key: {key!r}")
        self.key = key


class ProjectNotFound(MicrosubmitError):
    """No project manifest was found while ascending the filesystem."""


class InvalidUsername(MicrosubmitError):
    """A username sanitized down to the empty string."""


class AuthError(MicrosubmitError):
    """The forge rejected the supplied token (401-class)."""


class AuthRequired(MicrosubmitError):
    """An operation needs a token and none is available."""


class ForgeUnreachable(MicrosubmitError):
    """The forge could not be reached or answered with a server error."""


class UpstreamMissing(MicrosubmitError):
    """The upstream repository does not exist on the forge."""


class ForkTimeout(MicrosubmitError):
    """A freshly created fork did not become clonable within the wait budget."""


class GitTransportError(MicrosubmitError):
    """A git transport operation (clone/commit/push) failed.

    `step` names the sub-operation that failed: "clone", "commit" or "push".
    """

    def __init__(self, message: str, step: str = "clone"):
        super().__init__(message)
        self.step = step


class BranchExists(MicrosubmitError):
    """The requested branch name already exists on the fork."""


class ValidationRejected(MicrosubmitError):
    """The forge rejected a request as semantically invalid (422-class)."""


class ValidationFailed(MicrosubmitError):
    """Static validation of the snippet failed; `report` carries diagnostics."""

    def __init__(self, report):
        super().__init__("snippet failed validation")
        self.report = report


class PipelineError(MicrosubmitError):
    """A submission failed mid-flight; `stage` names where.

    Stages: fork | clone | commit | push | pr.
    """

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"submission failed at stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause


class ConfigError(MicrosubmitError):
    """Required configuration (base URLs, client id, ...) is absent."""


class ExchangeFailed(MicrosubmitError):
    """The forge rejected the authorization code during token exchange."""


class DuplicateRepo(MicrosubmitError):
    """A repository slug is already provisioned on the stub forge."""


class SinkError(MicrosubmitError):
    """The telemetry sink could not be written."""


class CellNotFound(MicrosubmitError):
    """A notebook cell index is out of range or the input is not a notebook."""
