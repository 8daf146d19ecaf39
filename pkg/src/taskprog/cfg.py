"""Control-flow graph over a parsed program.

The CFG enumerates, for every statement, the legal program-counter moves an
interpreter may take from it.  Moves are labeled edges; the runtime validates
every proposed move against this set, so the decision backend can never walk
the program in an illegal order.

Label conventions:

* ``NextSequential`` - to the next sibling statement (function definitions
  are skipped; they only run when called).
* ``EnterBlock``     - from a block header into its first body statement.
  On loop headers this starts an iteration; paired with ``ExitLoop``.
* ``LoopBack``       - from the last statement of a loop body to its header.
* ``ExitLoop``       - from a loop header past the loop.  When the loop body
  itself ends an enclosing scope the exit edge keeps the loop's label but
  targets the enclosing continuation (e.g. an outer loop header).
* ``TakeBranch`` / ``SkipBranch`` - from if/else-if headers into the taken
  body or onward along the chain / past it.
* ``Call``           - from a call site to the called function's first body
  statement.
* ``Return``         - from inside a function body back to the caller; the
  target is dynamic (chosen by the call stack), recorded as ``None``.
* ``Terminate``      - off the end of the program.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .lang import (
    BRANCH_KINDS,
    LOOP_KINDS,
    ProgramAST,
    Statement,
    StatementKind,
)


class EdgeKind(str, Enum):
    NEXT_SEQUENTIAL = "NextSequential"
    ENTER_BLOCK = "EnterBlock"
    LOOP_BACK = "LoopBack"
    EXIT_LOOP = "ExitLoop"
    TAKE_BRANCH = "TakeBranch"
    SKIP_BRANCH = "SkipBranch"
    CALL = "Call"
    RETURN = "Return"
    TERMINATE = "Terminate"


@dataclass(frozen=True)
class Edge:
    kind: EdgeKind
    target: str | None  # step_id; None for Terminate and dynamic Return


@dataclass
class PCMove:
    """A backend-chosen move: one CFG edge plus optional variable updates."""

    edge: EdgeKind
    target: str | None
    variable_updates: list[tuple[str, object]] = field(default_factory=list)
    note: str = ""

    def render(self) -> str:
        return f"{self.edge.value} -> {self.target or 'end'}" + (f" ({self.note})" if self.note else "")


@dataclass
class ControlFlowGraph:
    nodes: list[str]
    edges: dict[str, list[Edge]]
    entry: str | None

    def moves_from(self, step_id: str) -> list[Edge]:
        return self.edges.get(step_id, [])

    def has_edge(self, step_id: str, kind: EdgeKind, target: str | None) -> bool:
        return Edge(kind, target) in self.edges.get(step_id, [])


def _siblings_of(program: ProgramAST, stmt: Statement) -> list[Statement]:
    parent_id = program.parent_of[stmt.step_id]
    if parent_id is None:
        return program.statements
    return program.by_id[parent_id].children


def _next_executable_sibling(siblings: list[Statement], idx: int) -> Statement | None:
    for s in siblings[idx + 1:]:
        if s.kind != StatementKind.FUNCTION_DEF:
            return s
    return None


def _chain_end_index(siblings: list[Statement], idx: int) -> int:
    """Index of the last else-if/else continuing the branch chain at idx."""
    j = idx
    while j + 1 < len(siblings) and siblings[j + 1].kind in (
        StatementKind.ELSE_IF,
        StatementKind.ELSE,
    ):
        j += 1
    return j


def _continuation(program: ProgramAST, stmt: Statement) -> Edge:
    """The move taken after ``stmt`` (and any block it heads) completes.

    Walks outward through enclosing scopes: a next sibling wins; otherwise a
    loop parent yields LoopBack, a branch parent defers to the chain's own
    continuation, a function body yields a dynamic Return, and the top level
    terminates.
    """
    current = stmt
    while True:
        siblings = _siblings_of(program, current)
        idx = siblings.index(current)
        if current.kind in BRANCH_KINDS:
            # Continue after the whole if/else chain, not between its arms.
            idx = _chain_end_index(siblings, idx)
            current = siblings[idx]
        nxt = _next_executable_sibling(siblings, idx)
        if nxt is not None:
            return Edge(EdgeKind.NEXT_SEQUENTIAL, nxt.step_id)
        parent_id = program.parent_of[current.step_id]
        if parent_id is None:
            return Edge(EdgeKind.TERMINATE, None)
        parent = program.by_id[parent_id]
        if parent.kind in LOOP_KINDS:
            return Edge(EdgeKind.LOOP_BACK, parent.step_id)
        if parent.kind == StatementKind.FUNCTION_DEF:
            return Edge(EdgeKind.RETURN, None)
        # Branch arms and tolerated generic blocks continue after the header.
        current = parent


def entry_statement(program: ProgramAST) -> Statement | None:
    for stmt in program.statements:
        if stmt.kind != StatementKind.FUNCTION_DEF:
            return stmt
    return None


def build_cfg(program: ProgramAST) -> ControlFlowGraph:
    """Derive the full legal-move set for every statement."""
    edges: dict[str, list[Edge]] = {}
    nodes: list[str] = []

    for stmt in program.walk():
        nodes.append(stmt.step_id)
        out: list[Edge] = []
        kind = stmt.kind
        if kind in LOOP_KINDS:
            out.append(Edge(EdgeKind.ENTER_BLOCK, stmt.children[0].step_id))
            cont = _continuation(program, stmt)
            if cont.kind == EdgeKind.NEXT_SEQUENTIAL:
                out.append(Edge(EdgeKind.EXIT_LOOP, cont.target))
            else:
                # Exiting the last loop of a scope lands on the enclosing
                # continuation directly (outer header, return, or the end).
                out.append(cont)
        elif kind in (StatementKind.IF, StatementKind.ELSE_IF):
            out.append(Edge(EdgeKind.TAKE_BRANCH, stmt.children[0].step_id))
            siblings = _siblings_of(program, stmt)
            idx = siblings.index(stmt)
            nxt = siblings[idx + 1] if idx + 1 < len(siblings) else None
            if nxt is not None and nxt.kind in (StatementKind.ELSE_IF, StatementKind.ELSE):
                out.append(Edge(EdgeKind.SKIP_BRANCH, nxt.step_id))
            else:
                cont = _continuation(program, stmt)
                if cont.kind == EdgeKind.NEXT_SEQUENTIAL:
                    out.append(Edge(EdgeKind.SKIP_BRANCH, cont.target))
                else:
                    out.append(cont)
        elif kind == StatementKind.ELSE:
            out.append(Edge(EdgeKind.ENTER_BLOCK, stmt.children[0].step_id))
        elif kind == StatementKind.FUNCTION_DEF:
            # Structural only: execution enters via Call to the first body
            # statement, never by walking onto the definition header.
            out.append(Edge(EdgeKind.ENTER_BLOCK, stmt.children[0].step_id))
        elif kind == StatementKind.FUNCTION_RETURNS:
            out.append(Edge(EdgeKind.RETURN, None))
        elif kind == StatementKind.FUNCTION_CALL and not stmt.unresolved_call:
            func = program.functions[stmt.func_name or ""]
            out.append(Edge(EdgeKind.CALL, func.children[0].step_id))
        elif stmt.children:
            # Tolerated generic block (an action step with an indented body).
            out.append(Edge(EdgeKind.ENTER_BLOCK, stmt.children[0].step_id))
        else:
            out.append(_continuation(program, stmt))
        edges[stmt.step_id] = out

    entry = entry_statement(program)
    return ControlFlowGraph(nodes=nodes, edges=edges, entry=entry.step_id if entry else None)


def call_return_continuation(program: ProgramAST, call_stmt: Statement) -> Edge:
    """Where execution resumes after a call site's function returns."""
    return _continuation(program, call_stmt)
