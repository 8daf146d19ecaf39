"""Dynamic values and the per-episode variable store.

Values are plain Python objects: ``None``, ``bool``, :class:`decimal.Decimal`
(numbers are arbitrary-precision decimals, never binary floats), ``str``,
``list``, ``dict`` (insertion-ordered), and :class:`Table` (a list of objects
sharing one column set).  Everything that leaves the store - interpolated
text, context documents, trajectory files - goes through the canonical
printers here so equal values always render byte-identically.
"""

from __future__ import annotations

import csv
import io
import json
import re
from decimal import Decimal, InvalidOperation

from .lang import _BRACE_SPAN, UnbalancedBraces, extract_variable_refs, normalize_ref

Value = object  # Null | bool | Decimal | str | list | dict | Table


class ValueRuntimeError(ValueError):
    """Base class for store and coercion failures."""


class PathThroughNonObject(ValueRuntimeError):
    """A dotted path tried to traverse a value that is not an object."""


class UnboundVariable(ValueRuntimeError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"variable {{{name}}} is not bound")


class CoercionFailed(ValueRuntimeError):
    """Requested conversion is not reasonable; message says why."""


class ScopeUnderflow(ValueRuntimeError):
    """Popped a function scope or loop frame that was never pushed."""


class Table(list):
    """An ordered list of objects that all expose the same key set."""

    def __init__(self, rows=()):
        rows = list(rows)
        columns: tuple[str, ...] | None = None
        for row in rows:
            if not isinstance(row, dict):
                raise CoercionFailed("table rows must be objects")
            cols = tuple(row.keys())
            if columns is None:
                columns = cols
            elif set(cols) != set(columns):
                raise CoercionFailed(
                    f"table rows disagree on columns: {sorted(columns)} vs {sorted(cols)}"
                )
        super().__init__(rows)
        self.columns = list(columns or ())


KIND_NULL = "null"
KIND_BOOLEAN = "boolean"
KIND_NUMBER = "number"
KIND_TEXT = "text"
KIND_LIST = "list"
KIND_OBJECT = "object"
KIND_TABLE = "table"


def kind_of(value: Value) -> str:
    if value is None:
        return KIND_NULL
    if isinstance(value, bool):
        return KIND_BOOLEAN
    if isinstance(value, Decimal):
        return KIND_NUMBER
    if isinstance(value, str):
        return KIND_TEXT
    if isinstance(value, Table):
        return KIND_TABLE
    if isinstance(value, list):
        return KIND_LIST
    if isinstance(value, dict):
        return KIND_OBJECT
    raise CoercionFailed(f"unsupported value type {type(value).__name__}")


# --------------------------------------------------------------------------
# Canonical printing and JSON serialization
# --------------------------------------------------------------------------


def parse_number(text: str) -> Decimal:
    try:
        number = Decimal(text.strip())
    except InvalidOperation:
        raise CoercionFailed(f"the text {text!r} does not look like a number")
    if not number.is_finite():
        raise CoercionFailed(f"{text!r} is not a finite number")
    return number


def print_number(number: Decimal) -> str:
    """Fixed-point canonical form: no exponent, no trailing fraction zeros."""
    text = format(number, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if text in ("-0", ""):
        text = "0"
    return text


def canonical_text(value: Value) -> str:
    """How a value reads when substituted into a sentence.

    Text is unquoted; containers render as compact JSON.
    """
    k = kind_of(value)
    if k == KIND_TEXT:
        return value
    if k == KIND_NULL:
        return "null"
    if k == KIND_BOOLEAN:
        return "true" if value else "false"
    if k == KIND_NUMBER:
        return print_number(value)
    return canonical_json(value)


def canonical_json(value: Value) -> str:
    """Strict JSON with numbers emitted as exact decimal literals."""
    k = kind_of(value)
    if k == KIND_NULL:
        return "null"
    if k == KIND_BOOLEAN:
        return "true" if value else "false"
    if k == KIND_NUMBER:
        return print_number(value)
    if k == KIND_TEXT:
        return json.dumps(value, ensure_ascii=False)
    if k == KIND_LIST:
        return "[" + ", ".join(canonical_json(v) for v in value) + "]"
    if k == KIND_TABLE:
        rows = "[" + ", ".join(canonical_json(dict(r)) for r in value) + "]"
        return '{"$table": ' + rows + "}"
    # object
    parts = [f"{json.dumps(k2, ensure_ascii=False)}: {canonical_json(v)}" for k2, v in value.items()]
    return "{" + ", ".join(parts) + "}"


def from_jsonable(obj) -> Value:
    """Rebuild a value from parsed JSON (load with ``parse_float=Decimal``)."""
    if obj is None or isinstance(obj, (bool, str, Decimal)):
        return obj
    if isinstance(obj, int):
        return Decimal(obj)
    if isinstance(obj, float):
        return Decimal(str(obj))
    if isinstance(obj, list):
        return [from_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        if set(obj.keys()) == {"$table"}:
            return Table([from_jsonable(r) for r in obj["$table"]])
        return {k: from_jsonable(v) for k, v in obj.items()}
    raise CoercionFailed(f"cannot rebuild value from {type(obj).__name__}")


def loads_value(text: str) -> Value:
    return from_jsonable(json.loads(text, parse_float=Decimal, parse_int=Decimal))


def table_from_csv_text(text: str) -> Table:
    """Ingest CSV with a header row; every cell stays text.

    Numeric interpretation is deferred to coercion at the point of use.
    """
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows:
        return Table([])
    header = rows[0]
    return Table([{h: cell for h, cell in zip(header, row)} for row in rows[1:]])


# --------------------------------------------------------------------------
# Coercion
# --------------------------------------------------------------------------

_TRUE_WORDS = {"true", "yes", "on"}
_FALSE_WORDS = {"false", "no", "off"}


def coerce(value: Value, target_kind: str) -> Value:
    """Reasonable conversions between kinds; idempotent on same-kind input."""
    source = kind_of(value)
    if source == target_kind:
        return value
    if target_kind == KIND_TEXT:
        return canonical_text(value)
    if target_kind == KIND_NUMBER:
        if source == KIND_TEXT:
            return parse_number(value)
        if source == KIND_BOOLEAN:
            return Decimal(1) if value else Decimal(0)
        raise CoercionFailed(f"cannot turn a {source} into a number")
    if target_kind == KIND_BOOLEAN:
        if source == KIND_NUMBER:
            return value != 0
        if source == KIND_TEXT:
            lowered = value.strip().lower()
            if lowered in _TRUE_WORDS:
                return True
            if lowered in _FALSE_WORDS:
                return False
            raise CoercionFailed(f"the text {value!r} is neither true-ish nor false-ish")
        if source == KIND_NULL:
            return False
        raise CoercionFailed(f"cannot turn a {source} into a boolean")
    if target_kind == KIND_TABLE:
        if source == KIND_LIST:
            return Table(value)  # raises CoercionFailed when keys disagree
        raise CoercionFailed(f"cannot turn a {source} into a table")
    if target_kind == KIND_LIST:
        if source == KIND_TABLE:
            return list(value)
        raise CoercionFailed(f"cannot turn a {source} into a list")
    raise CoercionFailed(f"cannot turn a {source} into a {target_kind}")


# --------------------------------------------------------------------------
# Variable store
# --------------------------------------------------------------------------


class VariableStore:
    """Bindings for one episode: globals, function scopes, loop frames.

    Names declared by the program itself ("anchors") always live in the
    global bindings, even when assigned inside a function scope - the
    program-level persistence promise outranks lexical scoping.
    """

    def __init__(self, anchors: list[str] | None = None):
        self.globals: dict[str, Value] = {}
        self.anchors: set[str] = set(anchors or [])
        self.scopes: list[dict[str, Value]] = []
        self.loop_frames: list[dict] = []  # {"header": step_id, "iteration": int, "item": Value}

    # -- scope and loop frame management ----------------------------------

    def push_scope(self) -> None:
        self.scopes.append({})

    def pop_scope(self) -> None:
        if not self.scopes:
            raise ScopeUnderflow("no function scope to pop")
        self.scopes.pop()

    def push_loop(self, header: str) -> dict:
        frame = {"header": header, "iteration": 0, "item": None}
        self.loop_frames.append(frame)
        return frame

    def pop_loop(self) -> None:
        if not self.loop_frames:
            raise ScopeUnderflow("no loop frame to pop")
        self.loop_frames.pop()

    def loop_frame(self, header: str | None = None) -> dict | None:
        if header is None:
            return self.loop_frames[-1] if self.loop_frames else None
        for frame in reversed(self.loop_frames):
            if frame["header"] == header:
                return frame
        return None

    # -- reads and writes ---------------------------------------------------

    def set_var(self, path: str, value: Value) -> None:
        """Bind a (possibly dotted) path, auto-creating intermediate objects."""
        if not path:
            raise ValueRuntimeError("empty variable path")
        parts = path.split(".")
        root = parts[0]
        container = self._container_for_write(root)
        if len(parts) == 1:
            container[root] = value
            return
        node = container.setdefault(root, {})
        if kind_of(node) != KIND_OBJECT:
            raise PathThroughNonObject(
                f"{root} is a {kind_of(node)}, cannot descend into {path!r}"
            )
        for part in parts[1:-1]:
            nxt = node.get(part)
            if nxt is None:
                nxt = {}
                node[part] = nxt
            elif kind_of(nxt) != KIND_OBJECT:
                raise PathThroughNonObject(
                    f"{part} is a {kind_of(nxt)}, cannot descend into {path!r}"
                )
            node = nxt
        node[parts[-1]] = value

    def _container_for_write(self, root: str) -> dict[str, Value]:
        if root in self.anchors:
            return self.globals
        for scope in reversed(self.scopes):
            if root in scope:
                return scope
        if self.scopes:
            return self.scopes[-1]
        return self.globals

    def get_var(self, path: str) -> Value:
        """Resolve loop specials first, then scopes innermost-out, then globals."""
        parts = path.split(".")
        if parts[0] == "loop":
            frame = self.loop_frame()
            if frame is None:
                raise UnboundVariable(path)
            if len(parts) == 2 and parts[1] == "iteration":
                return Decimal(frame["iteration"])
            if len(parts) == 2 and parts[1] == "item":
                return frame["item"]
            raise UnboundVariable(path)
        root = parts[0]
        node = None
        found = False
        for scope in reversed(self.scopes):
            if root in scope:
                node = scope[root]
                found = True
                break
        if not found:
            if root not in self.globals:
                raise UnboundVariable(path)
            node = self.globals[root]
        for part in parts[1:]:
            if kind_of(node) != KIND_OBJECT:
                raise PathThroughNonObject(
                    f"{part} requested under a {kind_of(node)} in {path!r}"
                )
            if part not in node:
                raise UnboundVariable(path)
            node = node[part]
        return node

    def has_var(self, path: str) -> bool:
        try:
            self.get_var(path)
            return True
        except ValueRuntimeError:
            return False

    def bound_anchors(self) -> dict[str, Value]:
        """Anchor bindings that have a value, in declaration order."""
        return {name: self.globals[name] for name in sorted(self.anchors) if name in self.globals}


# --------------------------------------------------------------------------
# Template interpolation
# --------------------------------------------------------------------------


def interpolate(template: str, store: VariableStore, skip: set[str] | None = None) -> str:
    """Replace every ``{path}`` with the canonical text of its current value.

    ``skip`` names spans to leave verbatim (assignment targets, which are not
    readable yet).  Unknown readable names raise :class:`UnboundVariable`.
    """
    extract_variable_refs(template)  # raises UnbalancedBraces on bad templates

    def _replace(match: re.Match) -> str:
        name = normalize_ref(match.group(1))
        if name is None or (skip and name in skip):
            return match.group(0)
        return canonical_text(store.get_var(name))

    return _BRACE_SPAN.sub(_replace, template)
