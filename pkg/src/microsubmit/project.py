"""Project manifest parsing, project discovery, and destination planning.

A project is marked by a ``ballet.yml`` manifest at its root. The manifest
names the upstream repository and the directory that receives contributed
modules; everything else about where a submission lands is computed here.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

import yaml

from .errors import InvalidUsername, ParseError, ProjectNotFound, SchemaError
from .forge import RepoSlug

MANIFEST_NAME = "ballet.yml"

_SEGMENT_RE = re.compile(r"^[a-z_][a-z0-9_]*$")

DEFAULT_FILENAME_BASE = "feature"
DEFAULT_BRANCH_PREFIX = "submit"


@dataclass(frozen=True)
class ProjectConfig:
    """Parsed project manifest."""

    slug: str
    package: str
    upstream: RepoSlug
    contrib_root: str
    filename_base: str = DEFAULT_FILENAME_BASE
    allowed_unbound: frozenset[str] = field(default_factory=frozenset)
    branch_prefix: str = DEFAULT_BRANCH_PREFIX

    def __post_init__(self):
        root = PurePosixPath(self.contrib_root)
        if root.is_absolute():
            raise SchemaError("contrib_root", "contrib_root must be relative")
        for segment in root.parts:
            if segment == ".." or not _SEGMENT_RE.match(segment):
                raise SchemaError("contrib_root", f"bad path segment {segment!r}")
        if not root.parts:
            raise SchemaError("contrib_root", "contrib_root must be non-empty")
        if not _SEGMENT_RE.match(self.filename_base):
            raise SchemaError("filename_base", f"bad filename base {self.filename_base!r}")


@dataclass(frozen=True)
class DestinationPlan:
    """Where one submission lands inside a working tree.

    All paths are working-tree-relative, POSIX separators. The init files
    are the ones missing from the tree, outermost directory first.
    """

    feature_file: str
    package_init_files: tuple[str, ...]
    user_dir: str


def load_config(path: Path | str) -> ProjectConfig:
    """Parse a manifest file into a :class:`ProjectConfig`.

    Raises :class:`ParseError` for undecodable/unparseable documents and
    :class:`SchemaError` (carrying the offending key) for structural issues.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: manifest must be a mapping")
    return _config_from_mapping(doc)


def _section(doc: dict, name: str) -> dict:
    section = doc.get(name)
    if section is None:
        raise SchemaError(name, f"missing section {name!r}")
    if not isinstance(section, dict):
        raise SchemaError(name, f"section {name!r} must be a mapping")
    return section


def _require_str(section: dict, key: str) -> str:
    value = section.get(key)
    if value is None:
        raise SchemaError(key)
    if not isinstance(value, str) or not value:
        raise SchemaError(key, f"{key!r} must be a non-empty string")
    return value


def _config_from_mapping(doc: dict) -> ProjectConfig:
    project = _section(doc, "project")
    github = _section(doc, "github")
    contrib = _section(doc, "contrib")

    upstream_raw = _require_str(github, "upstream")
    try:
        upstream = RepoSlug.parse(upstream_raw)
    except ValueError as exc:
        raise SchemaError("upstream", str(exc)) from exc

    allowed = contrib.get("allowed_unbound", [])
    if allowed is None:
        allowed = []
    if not isinstance(allowed, list) or not all(isinstance(a, str) for a in allowed):
        raise SchemaError("allowed_unbound", "allowed_unbound must be a list of strings")

    kwargs = {}
    for key in ("filename_base", "branch_prefix"):
        if key in contrib and contrib[key] is not None:
            kwargs[key] = _require_str(contrib, key)

    return ProjectConfig(
        slug=_require_str(project, "slug"),
        package=_require_str(project, "package"),
        upstream=upstream,
        contrib_root=_require_str(contrib, "root"),
        allowed_unbound=frozenset(allowed),
        **kwargs,
    )


def discover_project(start_dir: Path | str) -> tuple[ProjectConfig, Path]:
    """Find the nearest enclosing project by ascending from ``start_dir``.

    Returns the parsed config and the directory containing the manifest.
    Raises :class:`ProjectNotFound` when no ancestor holds a manifest.
    """
    start = Path(start_dir).resolve()
    if not start.is_dir():
        raise ProjectNotFound(f"not a directory: {start}")
    for candidate in (start, *start.parents):
        manifest = candidate / MANIFEST_NAME
        if manifest.is_file():
            return load_config(manifest), candidate
    raise ProjectNotFound(f"no {MANIFEST_NAME} at or above {start}")


def sanitize_username(username: str) -> str:
    """Normalize a forge login to a valid package-name fragment.

    Lowercases, maps every character outside ``[a-z0-9_]`` to ``_`` and
    collapses runs of underscores. Raises :class:`InvalidUsername` when
    nothing remains.
    """
    mapped = re.sub(r"[^a-z0-9_]", "_", username.lower())
    collapsed = re.sub(r"_+", "_", mapped)
    if not collapsed:
        raise InvalidUsername(f"username {username!r} sanitizes to nothing")
    return collapsed


def plan_destination(config: ProjectConfig, username: str, working_tree: Path | str) -> DestinationPlan:
    """Compute the paths a submission will create inside ``working_tree``.

    The feature module goes to ``{contrib_root}/user_{username}/`` under a
    collision-free filename, and every package directory between there and
    the contribution root (exclusive) that lacks an ``__init__.py`` gets an
    empty one so the package structure stays importable.
    """
    tree = Path(working_tree)
    user_dir = PurePosixPath(config.contrib_root) / f"user_{sanitize_username(username)}"

    filename = f"{config.filename_base}.py"
    k = 2
    while (tree / user_dir / filename).exists():
        filename = f"{config.filename_base}_{k}.py"
        k += 1

    contrib_root = PurePosixPath(config.contrib_root)
    init_files = []
    current = user_dir
    while current != contrib_root:
        if not (tree / current / "__init__.py").exists():
            init_files.append(str(current / "__init__.py"))
        current = current.parent

    return DestinationPlan(
        feature_file=str(user_dir / filename),
        package_init_files=tuple(reversed(init_files)),
        user_dir=str(user_dir),
    )
