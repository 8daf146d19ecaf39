"""Execution tree and context serialization.

Every executed step expands one node; the tree mirrors the program's
structure rather than the flat timeline.  The serialized context keeps only
the active root-to-current path, folds completed sibling loop iterations into
one-line summaries, always carries the program-declared anchor variables, and
re-injects the most recent executions of the current step by exact step id.
Serialization never mutates the tree, so identical inputs render
byte-identical documents.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .values import VariableStore, canonical_text

DIGEST_CAP = 200
FOLD_VALUE_CAP = 40


class NodeKind(str, Enum):
    SEQUENTIAL = "Sequential"
    CONDITIONAL = "Conditional"
    LOOP_ITERATION = "LoopIteration"


class NodeStatus(str, Enum):
    SUCCEEDED = "Succeeded"
    FAILED = "Failed"
    RECOVERED = "Recovered"


class StructureViolation(RuntimeError):
    """A node append contradicted the tree construction rules."""


def digest(text: str, cap: int = DIGEST_CAP) -> str:
    """Single-line deterministic digest with a trailing truncation marker."""
    one_line = " ; ".join(part for part in (p.strip() for p in text.splitlines()) if part)
    if len(one_line) > cap:
        return one_line[: cap - 1] + "~"
    return one_line


@dataclass
class ExecNode:
    node_id: int
    step_id: str
    kind: NodeKind
    iteration: int | None = None
    action_digest: str = ""
    observation_digest: str = ""
    status: NodeStatus = NodeStatus.SUCCEEDED
    parent: int | None = None
    children: list[int] = field(default_factory=list)
    var_writes: list[tuple[str, str]] = field(default_factory=list)  # (path, canonical)
    note: str = ""


@dataclass
class StepHistoryRecord:
    step_id: str
    iteration: int | None
    action_digest: str
    outcome: str

    def render(self) -> str:
        where = f" (iteration {self.iteration})" if self.iteration else ""
        return f"step {self.step_id}{where}: {self.action_digest} -> {self.outcome}"


class ExecutionTree:
    """Per-episode tree of executed step nodes."""

    ROOT = 0

    def __init__(self):
        root = ExecNode(node_id=self.ROOT, step_id="", kind=NodeKind.SEQUENTIAL)
        self.nodes: dict[int, ExecNode] = {self.ROOT: root}
        self.current: int = self.ROOT
        self._next_id = 1

    def node(self, node_id: int) -> ExecNode:
        return self.nodes[node_id]

    @property
    def current_node(self) -> ExecNode:
        return self.nodes[self.current]

    def append_node(
        self,
        step_id: str,
        kind: NodeKind,
        iteration: int | None = None,
        action_digest: str = "",
        observation_digest: str = "",
        status: NodeStatus = NodeStatus.SUCCEEDED,
        note: str = "",
    ) -> int:
        """Attach a node for one executed step and make it current.

        Sequential and conditional nodes chain below the current node.  A
        loop-iteration node attaches to its header's node (the nearest
        active-path ancestor holding the same step id) with the next
        1-based iteration index; earlier iterations fall off the active path.
        """
        if kind == NodeKind.LOOP_ITERATION:
            anchor = self._loop_anchor(step_id)
            if anchor is None:
                raise StructureViolation(
                    f"loop iteration for step {step_id} has no header node on the active path"
                )
            siblings = [
                self.nodes[c] for c in anchor.children
                if self.nodes[c].kind == NodeKind.LOOP_ITERATION
            ]
            next_index = max((s.iteration or 0 for s in siblings), default=0) + 1
            if iteration is None:
                iteration = next_index
            elif iteration != next_index:
                raise StructureViolation(
                    f"iteration {iteration} out of order for step {step_id}; expected {next_index}"
                )
            parent = anchor.node_id
        else:
            if iteration is not None:
                raise StructureViolation(f"{kind.value} nodes carry no iteration index")
            parent = self.current
        node = ExecNode(
            node_id=self._next_id,
            step_id=step_id,
            kind=kind,
            iteration=iteration,
            action_digest=action_digest,
            observation_digest=observation_digest,
            status=status,
            parent=parent,
            note=note,
        )
        self.nodes[parent].children.append(node.node_id)
        self.nodes[node.node_id] = node
        self._next_id += 1
        self.current = node.node_id
        return node.node_id

    def _loop_anchor(self, step_id: str) -> ExecNode | None:
        node = self.nodes[self.current]
        while True:
            if node.step_id == step_id and node.kind != NodeKind.LOOP_ITERATION:
                return node
            if node.parent is None:
                return None
            node = self.nodes[node.parent]

    def set_current(self, node_id: int) -> None:
        if node_id not in self.nodes:
            raise StructureViolation(f"no node {node_id}")
        self.current = node_id

    def active_path(self) -> list[int]:
        """Root-to-current chain of node ids, root first."""
        path = []
        node = self.nodes[self.current]
        while True:
            path.append(node.node_id)
            if node.parent is None:
                break
            node = self.nodes[node.parent]
        path.reverse()
        return path

    def record_var_write(self, path: str, canonical: str) -> None:
        self.current_node.var_writes.append((path, canonical))

    def retrieve_history(self, step_id: str, k: int) -> list[StepHistoryRecord]:
        """The most recent k completed executions of exactly this step id.

        Nodes are matched by step id alone, never by surface text, and the
        current (in-flight) node is excluded.  Newest record last.
        """
        if k <= 0:
            return []
        matches = [
            n for nid, n in sorted(self.nodes.items())
            if n.step_id == step_id and nid != self.current and nid != self.ROOT
        ]
        records = [
            StepHistoryRecord(
                step_id=n.step_id,
                iteration=self._iteration_context(n),
                action_digest=n.action_digest,
                outcome=(n.status.value + (f": {n.note}" if n.note else "")),
            )
            for n in matches[-k:]
        ]
        return records

    def _iteration_context(self, node: ExecNode) -> int | None:
        while node is not None:
            if node.kind == NodeKind.LOOP_ITERATION:
                return node.iteration
            node = self.nodes[node.parent] if node.parent is not None else None
        return None

    def check_conditional_invariant(self) -> bool:
        """No conditional node ever holds two branch subtrees."""
        return all(
            len(n.children) <= 1
            for n in self.nodes.values()
            if n.kind == NodeKind.CONDITIONAL
        )

    def subtree_writes(self, node_id: int) -> list[tuple[str, str]]:
        out = list(self.nodes[node_id].var_writes)
        for child in self.nodes[node_id].children:
            out.extend(self.subtree_writes(child))
        return out

    def export(self) -> list[dict]:
        """One record per node, for trajectory files and offline inspection."""
        return [
            {
                "node_id": n.node_id,
                "parent": n.parent,
                "step_id": n.step_id,
                "kind": n.kind.value,
                "iteration": n.iteration,
                "status": n.status.value,
                "action": n.action_digest,
                "observation": n.observation_digest,
                "note": n.note,
            }
            for _, n in sorted(self.nodes.items())
            if n.node_id != self.ROOT
        ]


# --------------------------------------------------------------------------
# Context document
# --------------------------------------------------------------------------


@dataclass
class ContextDocument:
    """The serialized context handed to the decision backend.

    Everything except ``static_prefix`` counts as dynamic content.
    """

    static_prefix: str
    program_listing: str
    active_trace: list[str]
    folded_iterations: list[str]
    variables: list[str]
    beliefs: list[str]
    retrieved: list[str]

    def dynamic_text(self) -> str:
        sections = [
            ("program", self.program_listing),
            ("trace", "\n".join(self.active_trace)),
            ("folded loop iterations", "\n".join(self.folded_iterations)),
            ("variables", "\n".join(self.variables)),
            ("beliefs", "\n".join(self.beliefs)),
            ("recent history for this step", "\n".join(self.retrieved)),
        ]
        parts = []
        for title, body in sections:
            if body:
                parts.append(f"[{title}]\n{body}")
        return "\n\n".join(parts)

    def full_text(self) -> str:
        return f"{self.static_prefix}\n\n{self.dynamic_text()}"


def fold_iteration(node: ExecNode, writes: list[tuple[str, str]]) -> str:
    """One-line summary of a completed loop iteration: status plus data flow."""
    deltas = []
    seen = set()
    for path, canonical in reversed(writes):
        if path not in seen:
            seen.add(path)
            shown = canonical if len(canonical) <= FOLD_VALUE_CAP else canonical[: FOLD_VALUE_CAP - 1] + "~"
            deltas.append(f"{path}={shown}")
    deltas.reverse()
    delta_text = ", ".join(deltas) if deltas else "-"
    return f"iter {node.iteration}: {node.status.value.lower()}; vars: {delta_text}"


def serialize_context(
    tree: ExecutionTree,
    store: VariableStore,
    beliefs,
    k: int,
    *,
    program_listing: str,
    static_prefix: str = "",
    current_step_id: str = "",
    aux_reads: list[str] | None = None,
) -> ContextDocument:
    """Render the pruned context: active path, folds, anchors, beliefs, history.

    Pure and read-only: the same (tree, store, beliefs, k) always yields the
    same document.
    """
    path = tree.active_path()
    path_set = set(path)

    trace = []
    for nid in path:
        node = tree.nodes[nid]
        if nid == tree.ROOT:
            continue
        tag = f"step {node.step_id}"
        if node.kind == NodeKind.LOOP_ITERATION:
            tag += f" iteration {node.iteration}"
        line = f"{tag} [{node.status.value.lower()}]"
        if node.action_digest:
            line += f" did: {node.action_digest}"
        if node.observation_digest:
            line += f" saw: {node.observation_digest}"
        trace.append(line)

    folded = []
    for nid in path:
        node = tree.nodes[nid]
        loop_children = [
            tree.nodes[c] for c in node.children
            if tree.nodes[c].kind == NodeKind.LOOP_ITERATION
        ]
        if not loop_children:
            continue
        for child in loop_children:
            if child.node_id in path_set:
                continue  # the live iteration stays in the trace, not the fold
            folded.append(fold_iteration(child, tree.subtree_writes(child.node_id)))

    variables = []
    for name, value in store.bound_anchors().items():
        variables.append(f"{name} = {canonical_text(value)}")
    for name in aux_reads or []:
        root = name.split(".")[0]
        if root in store.anchors or root == "loop":
            continue
        if store.has_var(name):
            variables.append(f"{name} = {canonical_text(store.get_var(name))}")

    belief_lines = beliefs.serialize_lines() if beliefs is not None else []

    retrieved = [
        r.render() for r in tree.retrieve_history(current_step_id, k)
    ] if current_step_id else []

    return ContextDocument(
        static_prefix=static_prefix,
        program_listing=program_listing,
        active_trace=trace,
        folded_iterations=folded,
        variables=variables,
        beliefs=belief_lines,
        retrieved=retrieved,
    )
