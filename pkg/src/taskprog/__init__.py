"""taskprog: a runtime for semantic task programs.

Plain-language task programs with real control flow are parsed, checked
against a control-flow graph, and interpreted step by step against a
simulated mobile device.  Context for every decision is rebuilt from the
execution tree (active path, folded loop iterations, anchored variables,
step-id history) instead of an ever-growing transcript, and a belief state
watches for the device contradicting the runtime's assumptions.
"""

from .actions import ActionScript, Command, ExecutionReport
from .belief import BeliefState, Hypothesis, Proposal
from .cfg import ControlFlowGraph, Edge, EdgeKind, PCMove, build_cfg
from .device import Device, Observation
from .exectree import ContextDocument, ExecutionTree, NodeKind, NodeStatus, serialize_context
from .harness import (
    SuiteReport,
    Trajectory,
    export_growth_curve,
    replay,
    run_episode,
    run_suite,
)
from .interpreter import (
    EpisodeConfig,
    EpisodeState,
    Mode,
    init_episode,
    run_to_completion,
    step,
)
from .lang import (
    ProgramAST,
    SourceLine,
    Statement,
    StatementKind,
    canonical_print,
    classify_statement,
    extract_variable_refs,
    parse_program,
    tokenize_lines,
)
from .scenarios import TaskScenario, default_registry
from .tokens import TokenLedger, count_tokens
from .values import Table, VariableStore, coerce, interpolate

__version__ = "0.1.0"

__all__ = [
    "ActionScript", "Command", "ExecutionReport",
    "BeliefState", "Hypothesis", "Proposal",
    "ControlFlowGraph", "Edge", "EdgeKind", "PCMove", "build_cfg",
    "Device", "Observation",
    "ContextDocument", "ExecutionTree", "NodeKind", "NodeStatus", "serialize_context",
    "SuiteReport", "Trajectory", "export_growth_curve", "replay", "run_episode", "run_suite",
    "EpisodeConfig", "EpisodeState", "Mode", "init_episode", "run_to_completion", "step",
    "ProgramAST", "SourceLine", "Statement", "StatementKind", "canonical_print",
    "classify_statement", "extract_variable_refs", "parse_program", "tokenize_lines",
    "TaskScenario", "default_registry",
    "TokenLedger", "count_tokens",
    "Table", "VariableStore", "coerce", "interpolate",
]
