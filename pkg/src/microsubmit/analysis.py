"""Static validation of submitted snippets.

Three independent passes over a snippet of Python 3 source:

* syntax: does it parse (grammar plus scope-level rules the compiler
  enforces, e.g. ``nonlocal`` without a binding)?
* names: is every name that is read bound by a builtin, the project's
  allowlist, an import, an assignment, a definition, or an enclosing
  scope under lexical scoping rules?
* canonicalization: deterministic whitespace normalization that never
  changes the parse tree.

Failures are reported as data (diagnostics), never raised.
"""

from __future__ import annotations

import ast
import builtins
import io
import logging
import re
import tokenize
from dataclasses import dataclass, field
from enum import Enum

from .project import ProjectConfig

logger = logging.getLogger(__name__)

BUILTIN_NAMES = frozenset(dir(builtins))

# Names every executed module sees regardless of its own bindings.
MODULE_DUNDERS = frozenset(
    {"__name__", "__doc__", "__package__", "__loader__", "__spec__", "__builtins__"}
)


class DiagnosticKind(str, Enum):
    SYNTAX = "syntax"
    UNBOUND = "unbound"
    EMPTY = "empty"


@dataclass(frozen=True)
class Snippet:
    """One submitted block of source text."""

    source: str
    origin: str | None = None


@dataclass(frozen=True)
class Diagnostic:
    kind: DiagnosticKind
    message: str
    line: int
    name: str | None = None

    def as_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "message": self.message,
            "line": self.line,
            "name": self.name,
        }


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validating one snippet. ``ok`` iff no diagnostics."""

    ok: bool
    diagnostics: tuple[Diagnostic, ...]
    canonical_source: str | None = None
    warnings: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "diagnostics": [d.as_dict() for d in self.diagnostics],
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------------------
# syntax


def check_syntax(snippet: Snippet) -> list[Diagnostic]:
    """Return a syntax diagnostic per compile failure, or an empty list.

    Runs the full compiler rather than just the parser: statement-position
    errors (``return`` outside a function, ``nonlocal`` without a binding,
    ``continue`` outside a loop) only surface after parsing. dont_inherit
    keeps this module's own __future__ state out of the snippet.
    """
    try:
        compile(snippet.source, "<snippet>", "exec", dont_inherit=True)
    except SyntaxError as exc:
        line = exc.lineno or 1
        return [Diagnostic(DiagnosticKind.SYNTAX, f"{exc.msg} (line {line})", line)]
    except ValueError as exc:
        # e.g. null bytes in source
        return [Diagnostic(DiagnosticKind.SYNTAX, str(exc), 1)]
    return []


# ---------------------------------------------------------------------------
# name analysis

_MODULE = "module"
_CLASS = "class"
_FUNCTION = "function"
_COMPREHENSION = "comprehension"

_BIND = 1
_UNBIND = 0


class _Scope:
    __slots__ = ("kind", "parent", "events", "globals_")

    def __init__(self, kind: str, parent: "_Scope | None"):
        self.kind = kind
        self.parent = parent
        # name -> list of (time, _BIND|_UNBIND), appended in walk order
        self.events: dict[str, list[tuple[int, int]]] = {}
        self.globals_: set[str] = set()


@dataclass(frozen=True)
class _Load:
    name: str
    time: int
    line: int
    scope: _Scope = field(hash=False, compare=False)


class _NameWalker(ast.NodeVisitor):
    """Walks a module in evaluation order, recording binds and reads.

    Position (a monotone counter) matters for scopes whose code runs
    inline (module and class bodies); function bodies run later, so
    resolution against them ignores position.
    """

    def __init__(self):
        self.module_scope = _Scope(_MODULE, None)
        self.scope = self.module_scope
        self.loads: list[_Load] = []
        self.time = 0
        self.has_wildcard_import = False
        self.skip_annotations = False

    # -- bookkeeping

    def _tick(self) -> int:
        self.time += 1
        return self.time

    def _bind(self, name: str, scope: "_Scope | None" = None, kind: int = _BIND) -> None:
        scope = scope or self.scope
        if name in scope.globals_ and scope.kind != _MODULE:
            scope = self.module_scope  # `global` redirects stores to module scope
        scope.events.setdefault(name, []).append((self._tick(), kind))

    def _load(self, name: str, line: int) -> None:
        self.loads.append(_Load(name, self._tick(), line, self.scope))

    def _push(self, kind: str) -> _Scope:
        self.scope = _Scope(kind, self.scope)
        return self.scope

    def _pop(self) -> None:
        assert self.scope.parent is not None
        self.scope = self.scope.parent

    def _walrus_scope(self) -> _Scope:
        # Assignment expressions skip comprehension scopes.
        scope = self.scope
        while scope.kind == _COMPREHENSION:
            assert scope.parent is not None
            scope = scope.parent
        return scope

    # -- names and targets

    def visit_Name(self, node: ast.Name) -> None:
        if isinstance(node.ctx, ast.Load):
            self._load(node.id, node.lineno)
        elif isinstance(node.ctx, ast.Store):
            self._bind(node.id)
        else:  # Del
            self._bind(node.id, kind=_UNBIND)

    # -- imports

    def visit_Import(self, node: ast.Import) -> None:
        for alias in node.names:
            self._bind(alias.asname or alias.name.split(".", 1)[0])

    def visit_ImportFrom(self, node: ast.ImportFrom) -> None:
        if node.module == "__future__" and any(a.name == "annotations" for a in node.names):
            self.skip_annotations = True
        for alias in node.names:
            if alias.name == "*":
                self.has_wildcard_import = True
            else:
                self._bind(alias.asname or alias.name)

    # -- statements whose field order differs from evaluation order

    def visit_Assign(self, node: ast.Assign) -> None:
        self.visit(node.value)
        for target in node.targets:
            self.visit(target)

    def visit_AugAssign(self, node: ast.AugAssign) -> None:
        # An augmented target is read before it is written.
        if isinstance(node.target, ast.Name):
            self._load(node.target.id, node.target.lineno)
        else:
            self.visit(node.target.value)  # base of attribute/subscript
        self.visit(node.value)
        if isinstance(node.target, ast.Name):
            self._bind(node.target.id)

    def visit_AnnAssign(self, node: ast.AnnAssign) -> None:
        if not self.skip_annotations:
            self.visit(node.annotation)
        if node.value is not None:
            self.visit(node.value)
            self.visit(node.target)
        elif not isinstance(node.target, ast.Name):
            self.visit(node.target.value)
        # A bare `x: T` annotates without binding anything.

    def visit_NamedExpr(self, node: ast.NamedExpr) -> None:
        self.visit(node.value)
        self._bind(node.target.id, scope=self._walrus_scope())

    def visit_For(self, node: ast.For) -> None:
        self.visit(node.iter)
        self.visit(node.target)
        for stmt in node.body:
            self.visit(stmt)
        for stmt in node.orelse:
            self.visit(stmt)

    visit_AsyncFor = visit_For

    def visit_withitem(self, node: ast.withitem) -> None:
        self.visit(node.context_expr)
        if node.optional_vars is not None:
            self.visit(node.optional_vars)

    def visit_ExceptHandler(self, node: ast.ExceptHandler) -> None:
        if node.type is not None:
            self.visit(node.type)
        if node.name:
            self._bind(node.name)
        for stmt in node.body:
            self.visit(stmt)
        if node.name:
            # The handler variable is unbound again after the block.
            self._bind(node.name, kind=_UNBIND)

    def visit_Global(self, node: ast.Global) -> None:
        self.scope.globals_.update(node.names)

    # `nonlocal` needs no handler: the compiler already rejected any
    # declaration without a matching enclosing binding, and that binding
    # satisfies reads through ordinary scope resolution.

    # -- definitions

    def _visit_function_shell(self, node: ast.FunctionDef | ast.AsyncFunctionDef) -> None:
        for dec in node.decorator_list:
            self.visit(dec)
        self._visit_arg_defaults_and_annotations(node.args)
        if node.returns is not None and not self.skip_annotations:
            self.visit(node.returns)
        self._bind(node.name)
        self._push(_FUNCTION)
        for arg in self._all_args(node.args):
            self._bind(arg.arg)
        for stmt in node.body:
            self.visit(stmt)
        self._pop()

    visit_FunctionDef = _visit_function_shell
    visit_AsyncFunctionDef = _visit_function_shell

    @staticmethod
    def _all_args(args: ast.arguments) -> list[ast.arg]:
        every = [*args.posonlyargs, *args.args, *args.kwonlyargs]
        if args.vararg:
            every.append(args.vararg)
        if args.kwarg:
            every.append(args.kwarg)
        return every

    def _visit_arg_defaults_and_annotations(self, args: ast.arguments) -> None:
        for default in [*args.defaults, *[d for d in args.kw_defaults if d is not None]]:
            self.visit(default)
        if not self.skip_annotations:
            for arg in self._all_args(args):
                if arg.annotation is not None:
                    self.visit(arg.annotation)

    def visit_Lambda(self, node: ast.Lambda) -> None:
        self._visit_arg_defaults_and_annotations(node.args)
        self._push(_FUNCTION)
        for arg in self._all_args(node.args):
            self._bind(arg.arg)
        self.visit(node.body)
        self._pop()

    def visit_ClassDef(self, node: ast.ClassDef) -> None:
        for dec in node.decorator_list:
            self.visit(dec)
        for base in node.bases:
            self.visit(base)
        for kw in node.keywords:
            self.visit(kw.value)
        self._push(_CLASS)
        for stmt in node.body:
            self.visit(stmt)
        self._pop()
        # The class name binds only after its body has executed.
        self._bind(node.name)

    # -- comprehensions

    def _visit_comprehension(self, node, parts: list[ast.expr]) -> None:
        first, *rest = node.generators
        self.visit(first.iter)  # evaluated in the enclosing scope
        self._push(_COMPREHENSION)
        self.visit(first.target)
        for cond in first.ifs:
            self.visit(cond)
        for gen in rest:
            self.visit(gen.iter)
            self.visit(gen.target)
            for cond in gen.ifs:
                self.visit(cond)
        for part in parts:
            self.visit(part)
        self._pop()

    def visit_ListComp(self, node: ast.ListComp) -> None:
        self._visit_comprehension(node, [node.elt])

    def visit_SetComp(self, node: ast.SetComp) -> None:
        self._visit_comprehension(node, [node.elt])

    def visit_GeneratorExp(self, node: ast.GeneratorExp) -> None:
        self._visit_comprehension(node, [node.elt])

    def visit_DictComp(self, node: ast.DictComp) -> None:
        self._visit_comprehension(node, [node.key, node.value])

    # -- match statement patterns bind names

    def visit_MatchAs(self, node: ast.MatchAs) -> None:
        if node.pattern is not None:
            self.visit(node.pattern)
        if node.name:
            self._bind(node.name)

    def visit_MatchStar(self, node: ast.MatchStar) -> None:
        if node.name:
            self._bind(node.name)

    def visit_MatchMapping(self, node: ast.MatchMapping) -> None:
        for key in node.keys:
            self.visit(key)
        for pattern in node.patterns:
            self.visit(pattern)
        if node.rest:
            self._bind(node.rest)


def _resolve(load: _Load, allowed: frozenset[str]) -> bool:
    """True if the read is bound under lexical scoping at its position."""
    scope: _Scope | None = load.scope
    own = True
    deferred = False  # becomes True once a function boundary is crossed
    if load.name in load.scope.globals_:
        scope = None  # handled below against the module scope
        module = _module_of(load.scope)
        if _has_binding(module, load.name, None):
            return True
    while scope is not None:
        visible = own or scope.kind != _CLASS
        if visible and load.name in scope.events:
            position = load.time if (own and scope.kind in (_MODULE, _CLASS)) or (
                not deferred and scope.kind == _MODULE
            ) else None
            outcome = _has_binding(scope, load.name, position)
            if outcome is not None:
                return outcome
        if scope.kind in (_FUNCTION,):
            deferred = True
        own = False
        scope = scope.parent
    return load.name in BUILTIN_NAMES or load.name in MODULE_DUNDERS or load.name in allowed


def _module_of(scope: _Scope) -> _Scope:
    while scope.parent is not None:
        scope = scope.parent
    return scope


def _has_binding(scope: _Scope, name: str, position: int | None) -> bool | None:
    """Tri-state: True bound, False unbound-here (del), None no binding seen."""
    events = scope.events.get(name)
    if not events:
        return None
    if position is None:
        return True if any(kind == _BIND for _, kind in events) else None
    last = None
    for when, kind in events:
        if when < position:
            last = kind
        else:
            break
    if last is None:
        return None
    return last == _BIND


def _analyze_names(source: str, allowed: frozenset[str]) -> tuple[list[Diagnostic], list[str]]:
    tree = ast.parse(source, "<snippet>")
    walker = _NameWalker()
    walker.visit(tree)
    if walker.has_wildcard_import:
        message = "wildcard import prevents unbound-name analysis; skipping it"
        logger.warning(message)
        return [], [message]
    reported: dict[str, Diagnostic] = {}
    for load in walker.loads:
        if load.name in reported:
            continue
        if not _resolve(load, allowed):
            reported[load.name] = Diagnostic(
                DiagnosticKind.UNBOUND,
                f"name {load.name!r} is not defined",
                load.line,
                name=load.name,
            )
    return sorted(reported.values(), key=lambda d: (d.line, d.name or "")), []


def find_unbound_names(snippet: Snippet, allowed: frozenset[str] | set[str] = frozenset()) -> list[Diagnostic]:
    """Report names read where no binding form covers them.

    Callers must have run :func:`check_syntax` first. One diagnostic per
    distinct name, anchored at its first read. Names that are only ever
    written are never reported; attribute and subscript accesses report
    only their base name. A wildcard import disables the analysis for the
    snippet (logged as a warning).
    """
    diagnostics, _ = _analyze_names(snippet.source, frozenset(allowed))
    return diagnostics


# ---------------------------------------------------------------------------
# canonicalization

_LEADING_WS = re.compile(r"^[ \t]*")


def _protected_lines(source: str) -> tuple[set[int], set[int]]:
    """Rows whose EOL / leading whitespace lie inside a multi-line string."""
    protected_eol: set[int] = set()
    protected_indent: set[int] = set()
    try:
        tokens = tokenize.generate_tokens(io.StringIO(source).readline)
        for tok in tokens:
            if tok.type == tokenize.STRING and tok.end[0] > tok.start[0]:
                protected_eol.update(range(tok.start[0], tok.end[0]))
                protected_indent.update(range(tok.start[0] + 1, tok.end[0] + 1))
    except (tokenize.TokenError, IndentationError, SyntaxError):
        pass  # callers validate syntax first; be conservative on surprises
    return protected_eol, protected_indent


def canonicalize(snippet: Snippet) -> str:
    """Normalize whitespace without touching the parse tree.

    Line endings become LF, trailing whitespace is stripped, leading and
    trailing blank lines go away, leading-indentation tabs expand to four
    spaces, and the result ends in exactly one newline. Lines interior to
    multi-line strings are left byte-for-byte intact. Idempotent; an
    all-blank snippet canonicalizes to the empty string.
    """
    source = snippet.source.replace("\r\n", "\n").replace("\r", "\n")
    protected_eol, protected_indent = _protected_lines(source)

    lines = source.split("\n")
    out = []
    for row, line in enumerate(lines, start=1):
        if row not in protected_indent:
            head = _LEADING_WS.match(line).group(0)
            line = head.replace("\t", "    ") + line[len(head):]
        if row not in protected_eol:
            line = line.rstrip(" \t")
        out.append(line)

    while out and not out[0].strip():
        del out[0]
    while out and not out[-1].strip():
        del out[-1]
    if not out:
        return ""
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# composition


def validate(snippet: Snippet, config: ProjectConfig | None = None) -> ValidationReport:
    """Run syntax, emptiness and name checks; canonicalize on success.

    Never raises and never touches the filesystem or network. Unbound
    analysis only runs on parseable snippets, so a snippet with both kinds
    of problems reports only the syntax failure.
    """
    allowed = config.allowed_unbound if config is not None else frozenset()

    syntax = check_syntax(snippet)
    if syntax:
        return ValidationReport(ok=False, diagnostics=tuple(syntax))

    canonical = canonicalize(snippet)
    if canonical == "":
        empty = Diagnostic(DiagnosticKind.EMPTY, "snippet is blank", 1)
        return ValidationReport(ok=False, diagnostics=(empty,))

    unbound, warnings = _analyze_names(snippet.source, frozenset(allowed))
    if unbound:
        return ValidationReport(ok=False, diagnostics=tuple(unbound), warnings=tuple(warnings))

    return ValidationReport(
        ok=True, diagnostics=(), canonical_source=canonical, warnings=tuple(warnings)
    )
