"""Front end for the semantic task program (STP) language.

An STP source file is UTF-8 text, newline-delimited, indentation-significant,
with ``#`` comments.  Statements are natural-language-style instructions; a
fixed, priority-ordered pattern table classifies each line into a statement
kind.  Lines that match no pattern degrade to plain action steps instead of
failing, so fuzzy phrasings still parse.

The parser produces a :class:`ProgramAST` whose statements carry stable step
ids: the dotted path of 1-based child indices from the program root (for
example ``"2.1.3"``).  Step ids are independent of blank lines and comments,
so they survive cosmetic edits.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum


class StpSyntaxError(ValueError):
    """Base class for structural errors in STP source."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InconsistentIndentation(StpSyntaxError):
    """Indentation is not a whole multiple of the inferred unit, mixes tabs
    and spaces, or jumps more than one level at a time."""


class UnbalancedBraces(StpSyntaxError):
    """An opening brace has no matching close on the same line."""


class OrphanElse(StpSyntaxError):
    """An else/else-if with no preceding if or else-if sibling."""


class DanglingBlock(StpSyntaxError):
    """A block-opening statement with an empty body."""


class DuplicateFunction(StpSyntaxError):
    """Two function definitions share a name."""


class StatementKind(str, Enum):
    ACTION_STEP = "ActionStep"
    ASSIGNMENT = "Assignment"
    IF = "If"
    ELSE_IF = "ElseIf"
    ELSE = "Else"
    WHILE = "While"
    REPEAT_N = "RepeatN"
    FOR_EACH = "ForEach"
    FUNCTION_DEF = "FunctionDef"
    FUNCTION_INPUTS = "FunctionInputs"
    FUNCTION_RETURNS = "FunctionReturns"
    FUNCTION_CALL = "FunctionCall"
    COMMENT = "Comment"


# Kinds whose header line *requires* an indented body.
BLOCK_KINDS = frozenset(
    {
        StatementKind.IF,
        StatementKind.ELSE_IF,
        StatementKind.ELSE,
        StatementKind.WHILE,
        StatementKind.REPEAT_N,
        StatementKind.FOR_EACH,
        StatementKind.FUNCTION_DEF,
    }
)

LOOP_KINDS = frozenset(
    {StatementKind.WHILE, StatementKind.REPEAT_N, StatementKind.FOR_EACH}
)

BRANCH_KINDS = frozenset(
    {StatementKind.IF, StatementKind.ELSE_IF, StatementKind.ELSE}
)


@dataclass
class SourceLine:
    """A logical source line with comments stripped and indentation resolved."""

    index: int  # 1-based line number in the original source
    indent: int  # logical indentation level
    content: str  # statement text, comment stripped
    raw: str  # original text


@dataclass
class Statement:
    """One parsed STP statement plus classification metadata."""

    kind: StatementKind
    text: str
    step_id: str = ""
    var_reads: list[str] = field(default_factory=list)
    var_writes: list[str] = field(default_factory=list)
    children: list["Statement"] = field(default_factory=list)
    line: int = 0
    # Kind-specific extras (left at defaults when not applicable).
    condition: str | None = None
    count: int | None = None
    list_var: str | None = None
    loop_var: str | None = None
    func_name: str | None = None
    call_args: list[tuple[str, str]] = field(default_factory=list)
    save_as: str | None = None
    assign_target: str | None = None
    assign_expr: str | None = None
    params: list[tuple[str, str | None]] = field(default_factory=list)
    unresolved_call: bool = False

    def is_block(self) -> bool:
        return self.kind in BLOCK_KINDS

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass
class ProgramAST:
    """A parsed program: top-level statements, function registry, source digest."""

    statements: list[Statement]
    functions: dict[str, Statement]
    source_hash: str
    by_id: dict[str, Statement] = field(default_factory=dict)
    parent_of: dict[str, str | None] = field(default_factory=dict)

    def walk(self):
        for stmt in self.statements:
            yield from stmt.walk()

    def statement(self, step_id: str) -> Statement:
        return self.by_id[step_id]

    def anchors(self) -> list[str]:
        """Variable names declared at top level (outside function bodies).

        These are the persistent bindings the program promises to carry for
        the whole episode.  Function-body writes stay local and are excluded.
        """
        names: list[str] = []
        seen = set()

        def visit(stmt: Statement):
            if stmt.kind == StatementKind.FUNCTION_DEF:
                return
            for name in stmt.var_writes:
                root = name.split(".")[0]
                if root not in seen:
                    seen.add(root)
                    names.append(root)
            for child in stmt.children:
                visit(child)

        for stmt in self.statements:
            visit(stmt)
        return names


# --------------------------------------------------------------------------
# Line tokenizer
# --------------------------------------------------------------------------


def _strip_comment(text: str) -> str:
    """Drop everything from the first '#' that is outside double quotes."""
    in_quote = False
    for i, ch in enumerate(text):
        if ch == '"':
            in_quote = not in_quote
        elif ch == "#" and not in_quote:
            return text[:i]
    return text


def tokenize_lines(source: str) -> list[SourceLine]:
    """Split source into logical lines with normalized indentation levels.

    The indentation unit is inferred from the first indented line: a run of
    tabs means one tab per level, a run of N spaces means N spaces per level.
    Mixing tabs and spaces in one indent, or an indent that is not a whole
    multiple of the unit, raises :class:`InconsistentIndentation`.
    """
    lines: list[SourceLine] = []
    unit: str | None = None  # "\t" or a run of spaces
    for index, raw in enumerate(source.splitlines(), start=1):
        stripped_comment = _strip_comment(raw)
        content = stripped_comment.strip()
        if not content:
            continue
        leading = stripped_comment[: len(stripped_comment) - len(stripped_comment.lstrip())]
        if "\t" in leading and " " in leading:
            raise InconsistentIndentation("mixed tabs and spaces in indentation", index)
        if not leading:
            indent = 0
        else:
            if unit is None:
                unit = "\t" if leading.startswith("\t") else " " * len(leading)
            unit_len = len(unit)
            if (unit == "\t") != leading.startswith("\t"):
                raise InconsistentIndentation(
                    "indentation character does not match the first indented line", index
                )
            if len(leading) % unit_len != 0:
                raise InconsistentIndentation(
                    f"indent of {len(leading)} is not a multiple of the unit ({unit_len})",
                    index,
                )
            indent = len(leading) // unit_len
        lines.append(SourceLine(index=index, indent=indent, content=content, raw=raw))
    return lines


# --------------------------------------------------------------------------
# Variable references
# --------------------------------------------------------------------------

_BRACE_SPAN = re.compile(r"\{([^{}]*)\}")
_POSSESSIVE = re.compile(r"^(\w+)'s\s+(\w+)$")
_REF_NAME = re.compile(r"^[A-Za-z_]\w*(\.[A-Za-z_]\w*)*$")


def normalize_ref(inner: str) -> str | None:
    """Map brace contents to a dotted variable path, or None if not a reference.

    Possessive phrasing (``myCar's color``) normalizes to ``myCar.color``.
    """
    inner = inner.strip()
    m = _POSSESSIVE.match(inner)
    if m:
        inner = f"{m.group(1)}.{m.group(2)}"
    if _REF_NAME.match(inner):
        return inner
    return None


def extract_variable_refs(text: str) -> list[str]:
    """Return brace-delimited variable paths in order, duplicates preserved."""
    depth = 0
    opened_at = -1
    for i, ch in enumerate(text):
        if ch == "{":
            if depth == 0:
                opened_at = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
    if depth > 0:
        raise UnbalancedBraces(f"unclosed brace at column {opened_at + 1}: {text!r}")
    refs = []
    for m in _BRACE_SPAN.finditer(text):
        name = normalize_ref(m.group(1))
        if name is not None:
            refs.append(name)
    return refs


# --------------------------------------------------------------------------
# Statement classifier
# --------------------------------------------------------------------------

_IF_RE = re.compile(r"^if\s+(?P<cond>.+?)\s*:\s*$", re.IGNORECASE)
_ELSEIF_RE = re.compile(
    r"^(?:else\s*,?\s*if|elif)\s+(?P<cond>.+?)\s*:\s*$", re.IGNORECASE
)
_ELSE_RE = re.compile(r"^else\s*:\s*$", re.IGNORECASE)
_WHILE_RE = re.compile(r"^while\s+(?P<cond>.+?)\s*:\s*$", re.IGNORECASE)
_REPEAT_RE = re.compile(r"^repeat\s+(?P<count>\d+)\s+times?\s*:\s*$", re.IGNORECASE)
_FOREACH_RE = re.compile(
    r"^iterate\s+(?:through\s+|over\s+|across\s+)?(?:each\s+)?(?:item\s+)?(?:in\s+)?"
    r"\{(?P<list>[^}]+)\}\s+as\s+\{(?P<var>[^}]+)\}\s*:\s*$",
    re.IGNORECASE,
)
_FUNCDEF_RE = re.compile(
    r'^define\s+function\s+named\s+"(?P<name>[^"]+)"\s*:\s*$', re.IGNORECASE
)
_FUNCIN_RE = re.compile(r"^function\s+inputs\s*:\s*(?P<params>.+)$", re.IGNORECASE)
_FUNCRET_RE = re.compile(r"^function\s+returns\s+(?P<expr>.+?)\s*$", re.IGNORECASE)
_CALL_RE = re.compile(
    r'^execute\s+function\s+"(?P<name>[^"]+)"\s*(?P<rest>.*)$', re.IGNORECASE
)
_SET_RE = re.compile(
    r"^set\s+(?:variable\s+)?\{(?P<target>[^}]+)\}\s+to\s+(?P<expr>.+)$", re.IGNORECASE
)
_STORE_RE = re.compile(
    r"^store\s+(?P<expr>.+?)\s+into\s+\{(?P<target>[^}]+)\}\s*$", re.IGNORECASE
)
_CREATE_OBJ_RE = re.compile(
    r"^create\s+an?\s+object\s+\{(?P<target>[^}]+)\}\s+with\s+(?P<body>.+)$",
    re.IGNORECASE,
)
_SAVE_AS_RE = re.compile(
    r"^(?P<expr>.+?),?\s+save\s+result\s+as\s+\{(?P<target>[^}]+)\}\s*$", re.IGNORECASE
)
_RECORD_AS_RE = re.compile(
    r"^(?P<expr>.+?\brecord\w*\b.*?),?\s+as\s+\{(?P<target>[^}]+)\}\s*$", re.IGNORECASE
)
_TRAIL_AS_RE = re.compile(
    r"^(?P<expr>.+?),?\s+as\s+\{(?P<target>[^}]+)\}\s*$", re.IGNORECASE
)

_PARAM_RE = re.compile(r"\{([^}]+)\}(?:\s*\(([^)]*)\))?")
_CALL_SAVE_RE = re.compile(r",?\s*(?:and\s+)?save\s+result\s+as\s+\{([^}]+)\}\s*$", re.IGNORECASE)
_CALL_ARG_RE = re.compile(r"\{([^}]+)\}\s+as\s+(.+)$", re.IGNORECASE)


def _reads_excluding(text: str, exclude: set[str]) -> list[str]:
    return [r for r in extract_variable_refs(text) if r not in exclude]


def _parse_call_rest(rest: str) -> tuple[list[tuple[str, str]], str | None]:
    """Parse the tail of an ``execute function`` line into (args, save_as)."""
    rest = rest.strip().lstrip(",").strip()
    save_as = None
    m = _CALL_SAVE_RE.search(rest)
    if m:
        save_as = normalize_ref(m.group(1))
        rest = rest[: m.start()].strip().rstrip(",").strip()
    args: list[tuple[str, str]] = []
    if rest.lower().startswith("with"):
        rest = rest[4:].strip()
        for piece in re.split(r"\s+and\s+|,\s*", rest):
            piece = piece.strip()
            if not piece:
                continue
            am = _CALL_ARG_RE.match(piece)
            if am:
                name = normalize_ref(am.group(1))
                if name:
                    args.append((name, am.group(2).strip()))
    return args, save_as


def classify_statement(line: SourceLine) -> Statement:
    """Classify one logical line into a statement.

    The pattern table is tried in fixed priority order: block keywords first,
    then the function-call form, then assignment phrasings, and finally the
    action-step fallback.  Unrecognized structure never fails; it degrades to
    an action step, which is what makes loosely phrased programs executable.
    """
    text = line.content
    refs = extract_variable_refs(text)  # raises UnbalancedBraces early

    m = _ELSEIF_RE.match(text)
    if m:
        cond = m.group("cond")
        return Statement(
            kind=StatementKind.ELSE_IF, text=text, line=line.index,
            condition=cond, var_reads=extract_variable_refs(cond),
        )
    m = _IF_RE.match(text)
    if m:
        cond = m.group("cond")
        return Statement(
            kind=StatementKind.IF, text=text, line=line.index,
            condition=cond, var_reads=extract_variable_refs(cond),
        )
    if _ELSE_RE.match(text):
        return Statement(kind=StatementKind.ELSE, text=text, line=line.index)
    m = _WHILE_RE.match(text)
    if m:
        cond = m.group("cond")
        return Statement(
            kind=StatementKind.WHILE, text=text, line=line.index,
            condition=cond, var_reads=extract_variable_refs(cond),
        )
    m = _REPEAT_RE.match(text)
    if m:
        return Statement(
            kind=StatementKind.REPEAT_N, text=text, line=line.index,
            count=int(m.group("count")),
        )
    m = _FOREACH_RE.match(text)
    if m:
        list_var = normalize_ref(m.group("list"))
        loop_var = normalize_ref(m.group("var"))
        if list_var and loop_var:
            return Statement(
                kind=StatementKind.FOR_EACH, text=text, line=line.index,
                list_var=list_var, loop_var=loop_var,
                var_reads=[list_var], var_writes=[loop_var],
            )
    m = _FUNCDEF_RE.match(text)
    if m:
        return Statement(
            kind=StatementKind.FUNCTION_DEF, text=text, line=line.index,
            func_name=m.group("name"),
        )
    m = _FUNCIN_RE.match(text)
    if m:
        params: list[tuple[str, str | None]] = []
        for pm in _PARAM_RE.finditer(m.group("params")):
            name = normalize_ref(pm.group(1))
            if name:
                hint = pm.group(2).strip() if pm.group(2) else None
                params.append((name, hint))
        return Statement(
            kind=StatementKind.FUNCTION_INPUTS, text=text, line=line.index,
            params=params, var_writes=[p for p, _ in params],
        )
    m = _FUNCRET_RE.match(text)
    if m:
        return Statement(
            kind=StatementKind.FUNCTION_RETURNS, text=text, line=line.index,
            var_reads=extract_variable_refs(m.group("expr")),
        )
    m = _CALL_RE.match(text)
    if m:
        args, save_as = _parse_call_rest(m.group("rest"))
        reads = []
        for _, expr in args:
            reads.extend(extract_variable_refs(expr))
        return Statement(
            kind=StatementKind.FUNCTION_CALL, text=text, line=line.index,
            func_name=m.group("name"), call_args=args, save_as=save_as,
            var_reads=reads, var_writes=[save_as] if save_as else [],
        )
    for pattern in (_SET_RE, _STORE_RE, _CREATE_OBJ_RE, _SAVE_AS_RE, _RECORD_AS_RE, _TRAIL_AS_RE):
        m = pattern.match(text)
        if not m:
            continue
        target = normalize_ref(m.group("target"))
        if target is None:
            continue
        expr = m.groupdict().get("expr") or m.groupdict().get("body") or ""
        return Statement(
            kind=StatementKind.ASSIGNMENT, text=text, line=line.index,
            assign_target=target, assign_expr=expr.strip(),
            var_reads=_reads_excluding(text, {target}), var_writes=[target],
        )
    return Statement(
        kind=StatementKind.ACTION_STEP, text=text, line=line.index, var_reads=refs
    )


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def parse_program(source: str) -> ProgramAST:
    """Parse STP source into an AST with stable step ids.

    Raises :class:`OrphanElse` when an else/else-if has no preceding branch
    sibling and :class:`DanglingBlock` when a block header has no body.
    """
    lines = tokenize_lines(source)
    top: list[Statement] = []
    stack: list[Statement] = []  # open block headers, one per indent level

    for line in lines:
        if line.indent > len(stack):
            raise InconsistentIndentation(
                f"indent jumps from level {len(stack)} to {line.indent}", line.index
            )
        stmt = classify_statement(line)
        del stack[line.indent:]
        siblings = stack[-1].children if stack else top
        if stmt.kind in (StatementKind.ELSE_IF, StatementKind.ELSE):
            prev = siblings[-1] if siblings else None
            if prev is None or prev.kind not in (StatementKind.IF, StatementKind.ELSE_IF):
                raise OrphanElse(f"{stmt.text!r} has no preceding if", line.index)
        siblings.append(stmt)
        stack.append(stmt)

    program = ProgramAST(statements=top, functions={}, source_hash=_hash_source(lines))
    _assign_ids(program)
    _validate_blocks(program)
    _register_functions(program)
    return program


def _hash_source(lines: list[SourceLine]) -> str:
    normalized = "\n".join(f"{line.indent}:{line.content}" for line in lines)
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


def _assign_ids(program: ProgramAST) -> None:
    def visit(stmt: Statement, path: str, parent: str | None):
        stmt.step_id = path
        program.by_id[path] = stmt
        program.parent_of[path] = parent
        for i, child in enumerate(stmt.children, start=1):
            visit(child, f"{path}.{i}", path)

    for i, stmt in enumerate(program.statements, start=1):
        visit(stmt, str(i), None)


def _validate_blocks(program: ProgramAST) -> None:
    for stmt in program.walk():
        if stmt.is_block() and not stmt.children:
            raise DanglingBlock(f"{stmt.text!r} opens a block with no body", stmt.line)


def _register_functions(program: ProgramAST) -> None:
    for stmt in program.walk():
        if stmt.kind == StatementKind.FUNCTION_DEF:
            name = stmt.func_name or ""
            if name in program.functions:
                raise DuplicateFunction(f"function {name!r} defined twice", stmt.line)
            program.functions[name] = stmt
    for stmt in program.walk():
        if stmt.kind == StatementKind.FUNCTION_CALL:
            stmt.unresolved_call = stmt.func_name not in program.functions


# --------------------------------------------------------------------------
# Canonical printer
# --------------------------------------------------------------------------

INDENT_UNIT = "    "


def canonical_print(program: ProgramAST, mark_step: str | None = None) -> str:
    """Stable one-statement-per-line rendering; 4-space indent per level.

    When ``mark_step`` is given, that statement's line is prefixed with an
    arrow so a reader (or a prompt) can see where execution stands.
    """
    out: list[str] = []

    def visit(stmt: Statement, depth: int):
        prefix = "-> " if stmt.step_id == mark_step else "   " if mark_step else ""
        out.append(f"{prefix}{INDENT_UNIT * depth}{stmt.text}")
        for child in stmt.children:
            visit(child, depth + 1)

    for stmt in program.statements:
        visit(stmt, 0)
    return "\n".join(out)


def structurally_equal(a: ProgramAST, b: ProgramAST) -> bool:
    """Compare two ASTs on kinds, texts, and shape (not surface whitespace)."""

    def eq(x: Statement, y: Statement) -> bool:
        if x.kind != y.kind or x.text != y.text or len(x.children) != len(y.children):
            return False
        return all(eq(cx, cy) for cx, cy in zip(x.children, y.children))

    if len(a.statements) != len(b.statements):
        return False
    return all(eq(x, y) for x, y in zip(a.statements, b.statements))
