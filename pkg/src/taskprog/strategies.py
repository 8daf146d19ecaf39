"""Context strategies: how an episode's history becomes the backend's context.

``ProgramGuided`` serializes the pruned execution tree.  The two comparators
model the common alternatives - keeping everything, or a fixed recent window
- while sharing the interpreter, backend, and simulator, so token numbers are
an apples-to-apples comparison of pruning policy alone.
"""

from __future__ import annotations

from .exectree import ContextDocument, serialize_context
from .lang import canonical_print
from .values import canonical_text

PROGRAM_GUIDED = "ProgramGuided"
FULL_HISTORY = "FullHistory"
SLIDING_WINDOW = "SlidingWindow"


class ProgramGuidedStrategy:
    """Active-path trace, folded loop iterations, anchors, step-id retrieval."""

    name = PROGRAM_GUIDED

    def build_document(self, state) -> ContextDocument:
        stmt = state.current_statement
        return serialize_context(
            state.tree,
            state.store,
            state.beliefs,
            state.config.retrieval_k,
            program_listing=canonical_print(state.program, mark_step=state.pc.current),
            current_step_id=state.pc.current,
            aux_reads=stmt.var_reads,
        )


def _history_record_lines(record: dict) -> str:
    return (
        f"step {record['step_index']} (program step {record['step_id']})\n"
        f"instruction: {record['instruction']}\n"
        f"screen before:\n{record['observation']}\n"
        f"did: {record['script']}\n"
        f"result: {record['result']}"
    )


def _all_variables(state) -> list[str]:
    lines = []
    for name in sorted(state.store.globals):
        lines.append(f"{name} = {canonical_text(state.store.globals[name])}")
    for scope in state.store.scopes:
        for name in sorted(scope):
            lines.append(f"{name} = {canonical_text(scope[name])}")
    return lines


class FullHistoryStrategy:
    """No pruning at all: every step record rides along forever."""

    name = FULL_HISTORY

    def build_document(self, state) -> ContextDocument:
        records = [_history_record_lines(r) for r in state.history]
        return ContextDocument(
            static_prefix="",
            program_listing=canonical_print(state.program, mark_step=state.pc.current),
            active_trace=records,
            folded_iterations=[],
            variables=_all_variables(state),
            beliefs=state.beliefs.serialize_lines(),
            retrieved=[],
        )


class SlidingWindowStrategy:
    """Keep only the most recent W step records (default 5)."""

    name = SLIDING_WINDOW

    def __init__(self, window: int = 5):
        self.window = window
        self.name = f"{SLIDING_WINDOW}({window})"

    def build_document(self, state) -> ContextDocument:
        records = [_history_record_lines(r) for r in state.history[-self.window:]]
        return ContextDocument(
            static_prefix="",
            program_listing=canonical_print(state.program, mark_step=state.pc.current),
            active_trace=records,
            folded_iterations=[],
            variables=_all_variables(state),
            beliefs=state.beliefs.serialize_lines(),
            retrieved=[],
        )


def make_strategy(spec: str):
    """Build a strategy from its config name: ProgramGuided, FullHistory,
    SlidingWindow, or SlidingWindow(W)."""
    if spec == PROGRAM_GUIDED:
        return ProgramGuidedStrategy()
    if spec == FULL_HISTORY:
        return FullHistoryStrategy()
    if spec == SLIDING_WINDOW:
        return SlidingWindowStrategy()
    if spec.startswith(f"{SLIDING_WINDOW}(") and spec.endswith(")"):
        return SlidingWindowStrategy(int(spec[len(SLIDING_WINDOW) + 1:-1]))
    raise ValueError(f"unknown strategy {spec!r}")
