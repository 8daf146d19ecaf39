"""Episode interpreter: alternating action generation and PC-update modes.

Each cycle grounds the statement under the program counter into an action
script (action generation), executes it against the device with per-command
belief verification, then asks the backend for the next program-counter move
and validates it against the control-flow graph (PC update).  A detected
belief-reality gap interposes a recovery phase: a corrective script runs and
the interrupted statement is retried.

The interpreter owns all bookkeeping the backend must not be trusted with:
loop frames and iteration counts, call stack and scopes, for-each bindings,
anchor writes, and the execution tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum

from .actions import ActionScript, Command, CommandResult, ExecutionReport
from .backends.base import (
    Backend,
    BackendError,
    BackendRequest,
    Purpose,
    render_structured,
    static_prefix,
)
from .belief import BeliefState, Proposal
from .cfg import (
    ControlFlowGraph,
    Edge,
    EdgeKind,
    PCMove,
    call_return_continuation,
    build_cfg,
)
from .device import Device, DeviceError, IllegalAction, TargetNotFound
from .exectree import ExecutionTree, NodeKind, NodeStatus, digest
from .lang import LOOP_KINDS, ProgramAST, Statement, StatementKind, parse_program
from .tokens import TokenLedger, count_tokens
from .values import VariableStore, canonical_text, interpolate, loads_value


class EmptyProgram(ValueError):
    """The program has no executable statement."""


class StepBudgetExceeded(RuntimeError):
    pass


class EpisodeFailure(RuntimeError):
    """The episode cannot continue (bad moves, unrecoverable gap, no rule)."""


class Mode(str, Enum):
    ACTION_GENERATION = "ActionGeneration"
    PC_UPDATE = "PCUpdate"
    RECOVERY = "Recovery"
    TERMINATED = "Terminated"


@dataclass
class EpisodeConfig:
    retrieval_k: int = 3
    max_steps: int = 200
    belief_enabled: bool = True
    verify_every_command: bool = True
    pc_retry_limit: int = 2
    recovery_attempt_limit: int = 2


@dataclass
class CallFrame:
    func_name: str
    return_edge: Edge
    save_as: str | None
    caller_step: str


@dataclass
class ProgramCounter:
    current: str
    call_stack: list[CallFrame] = field(default_factory=list)


@dataclass
class EpisodeState:
    program: ProgramAST
    cfg: ControlFlowGraph
    pc: ProgramCounter
    tree: ExecutionTree
    store: VariableStore
    beliefs: BeliefState
    env: Device
    backend: Backend
    strategy: object  # context strategy; see strategies module
    config: EpisodeConfig
    mode: Mode = Mode.ACTION_GENERATION
    step_count: int = 0  # completed generation+update cycles
    ag_calls: int = 0
    pcu_calls: int = 0
    ledger: TokenLedger = field(default_factory=TokenLedger)
    history: list[dict] = field(default_factory=list)  # unpruned per-step log
    records: list[dict] = field(default_factory=list)  # trajectory step records
    answers: list[str] = field(default_factory=list)
    done_status: str | None = None
    failure: str | None = None
    recovery_attempts: int = 0
    just_recovered: bool = False
    _pending_header: dict | None = None

    @property
    def current_statement(self) -> Statement:
        return self.program.statement(self.pc.current)


def init_episode(
    program: ProgramAST,
    env: Device,
    backend: Backend,
    strategy,
    config: EpisodeConfig | None = None,
    cfg: ControlFlowGraph | None = None,
) -> EpisodeState:
    """Set up an episode at the first executable statement.

    All variables the program declares are pre-registered as anchors so they
    persist (and serialize) for the entire run.
    """
    graph = cfg if cfg is not None else build_cfg(program)
    if graph.entry is None:
        raise EmptyProgram("the program has no executable statement")
    store = VariableStore(anchors=program.anchors())
    return EpisodeState(
        program=program,
        cfg=graph,
        pc=ProgramCounter(current=graph.entry),
        tree=ExecutionTree(),
        store=store,
        beliefs=BeliefState(),
        env=env,
        backend=backend,
        strategy=strategy,
        config=config or EpisodeConfig(),
    )


# --------------------------------------------------------------------------
# Backend plumbing with token accounting
# --------------------------------------------------------------------------


def _call_backend(state: EpisodeState, purpose: Purpose, method: str, structured: dict, doc_text: str = ""):
    prefix = static_prefix(purpose)
    request = BackendRequest(
        purpose=purpose,
        static_prefix=prefix,
        dynamic_payload=_join_payload(doc_text, structured),
        structured=structured,
    )
    result, usage = getattr(state.backend, method)(request)
    static_tokens = count_tokens(prefix)
    if usage is not None:
        dynamic_tokens = max(usage.prompt_tokens - static_tokens, 0)
        output_tokens = usage.output_tokens
    else:
        dynamic_tokens = count_tokens(request.dynamic_payload)
        output_tokens = count_tokens(_render_result(result))
    state.ledger.record(
        step_index=state.ag_calls,
        purpose=purpose.value,
        static_prefix_tokens=static_tokens,
        dynamic_tokens=dynamic_tokens,
        output_tokens=output_tokens,
    )
    return result


def _join_payload(doc_text: str, structured: dict) -> str:
    extras = render_structured(structured)
    if doc_text and extras:
        return f"{doc_text}\n\n{extras}"
    return doc_text or extras


def _render_result(result) -> str:
    if isinstance(result, ActionScript):
        return result.render()
    if isinstance(result, PCMove):
        return result.render()
    if isinstance(result, list):
        return "\n".join(f"{p.subject}: {p.claim}" for p in result if isinstance(p, Proposal))
    if isinstance(result, dict):
        return "; ".join(f"{k}={v}" for k, v in sorted(result.items()))
    return str(result)


def _statement_meta(stmt: Statement) -> dict:
    return {
        "kind": stmt.kind.value,
        "step_id": stmt.step_id,
        "text": stmt.text,
        "assign_target": stmt.assign_target,
        "assign_expr": stmt.assign_expr,
        "list_var": stmt.list_var,
        "loop_var": stmt.loop_var,
        "count": stmt.count,
        "condition": stmt.condition,
        "func_name": stmt.func_name,
    }


def _resolved_vars(state: EpisodeState, stmt: Statement) -> dict:
    names = list(dict.fromkeys(stmt.var_reads + ([stmt.list_var] if stmt.list_var else [])))
    out = {}
    for name in names:
        if state.store.has_var(name):
            out[name] = state.store.get_var(name)
    return out


# --------------------------------------------------------------------------
# Script execution
# --------------------------------------------------------------------------


def execute_action_script(
    script: ActionScript, env: Device, state: EpisodeState
) -> ExecutionReport:
    """Run commands in order with belief verification after each one.

    A contradicted belief abandons the remaining commands and flags a gap; a
    failed command (missing target, illegal action) aborts the script, and
    only counts as a gap when verification explains it.
    """
    script.validate()
    report = ExecutionReport()
    config = state.config
    commands = script.commands
    for index, cmd in enumerate(commands):
        ok = True
        detail = ""
        try:
            detail = _apply_command(cmd, env, state, report)
        except (TargetNotFound, IllegalAction) as e:
            ok = False
            detail = f"{type(e).__name__}: {e}"
        observation = env.observe()
        obs_digest = digest(observation.render())
        report.results.append(
            CommandResult(command=cmd, ok=ok, detail=detail, observation_digest=obs_digest)
        )
        is_last = index == len(commands) - 1
        if config.belief_enabled and (config.verify_every_command or is_last or not ok):
            contradictions = _verify_beliefs(state, observation, cmd, obs_digest)
            if contradictions:
                state.beliefs.align(contradictions)
                report.belief_gap = True
                report.failure = state.beliefs.recovery_note
                return report
        if not ok:
            report.failure = detail
            return report
        if cmd.name == "done":
            break
    report.completed = True
    return report


def _apply_command(cmd: Command, env: Device, state: EpisodeState, report: ExecutionReport) -> str:
    if cmd.is_device:
        return env.execute(cmd)
    if cmd.name == "read_screen":
        return _read_screen(cmd.args[0], env, state, report)
    if cmd.name == "assign":
        value = loads_value(cmd.args[1])
        state.store.set_var(cmd.args[0], value)
        report.var_writes.append((cmd.args[0], canonical_text(value)))
        return f"assigned {cmd.args[0]}"
    if cmd.name == "answer":
        state.answers.append(cmd.args[0])
        report.answer = cmd.args[0]
        return "told the user"
    if cmd.name == "done":
        report.done_status = cmd.args[0]
        return f"declared done ({cmd.args[0]})"
    raise IllegalAction(f"unknown command {cmd.name!r}")


def _read_screen(path: str, env: Device, state: EpisodeState, report: ExecutionReport) -> str:
    observation = env.observe()
    view = observation.view
    if view == "note_view":
        lines = [el.text for el in observation.elements if el.element_id.startswith("line-")]
        value: object = lines
        merged = False
    elif view.endswith("_list"):
        fresh = observation.visible_item_texts()
        existing = state.store.get_var(path) if state.store.has_var(path) else None
        if isinstance(existing, list):
            value = existing + [t for t in fresh if t not in existing]
            merged = True
        else:
            value = fresh
            merged = False
    elif view == "home":
        value = [el.text for el in observation.elements if el.kind == "text"]
        merged = False
    else:
        value = [el.text for el in observation.elements if el.kind == "text"]
        merged = False
    state.store.set_var(path, value)
    report.var_writes.append((path, canonical_text(value)))
    return f"read the screen into {path}" + (" (merged)" if merged else "")


def _verify_beliefs(state: EpisodeState, observation, last_command: Command, evidence: str):
    active = state.beliefs.active()
    if not active:
        return []
    verdicts = _call_backend(
        state,
        Purpose.CHECK_BELIEFS,
        "check_beliefs",
        {
            "hypotheses": active,
            "observation": observation,
            "last_command": last_command,
        },
    )
    return state.beliefs.apply_verdicts(verdicts, state.tree.current, evidence)


def _propose_beliefs(state: EpisodeState, commands: list[Command]) -> None:
    if not state.config.belief_enabled:
        return
    observation = state.env.observe()
    proposals = _call_backend(
        state,
        Purpose.PROPOSE_BELIEFS,
        "propose_beliefs",
        {"commands": commands, "observation": observation},
    )
    state.beliefs.apply_proposals(proposals, state.tree.current)


# --------------------------------------------------------------------------
# Legal moves and validation
# --------------------------------------------------------------------------


def legal_moves(state: EpisodeState) -> list[dict]:
    moves = []
    for edge in state.cfg.moves_from(state.pc.current):
        if edge.kind == EdgeKind.RETURN and not state.pc.call_stack:
            continue
        moves.append({"edge": edge.kind.value, "target": edge.target})
    return moves


def validate_pc_move(state: EpisodeState, move: PCMove) -> tuple[bool, str]:
    """Accept iff (edge, target) is a CFG edge from here and stacks allow it."""
    edges = state.cfg.moves_from(state.pc.current)
    if Edge(move.edge, move.target) not in edges:
        legal = ", ".join(f"{e.kind.value}->{e.target}" for e in edges)
        return False, f"({move.edge.value}, {move.target}) is not legal here; legal: {legal}"
    if move.edge == EdgeKind.RETURN and not state.pc.call_stack:
        return False, "no active call to return from"
    if move.edge == EdgeKind.LOOP_BACK:
        if state.store.loop_frame(move.target) is None:
            return False, f"no active loop frame for header {move.target}"
    stmt = state.current_statement
    if move.edge == EdgeKind.ENTER_BLOCK and stmt.kind == StatementKind.FOR_EACH:
        frame = state.store.loop_frame(stmt.step_id)
        done = frame["iteration"] if frame else 0
        items = state.store.get_var(stmt.list_var) if state.store.has_var(stmt.list_var) else None
        if not isinstance(items, list):
            return False, f"{{{stmt.list_var}}} holds no list to iterate"
        if done >= len(items):
            return False, f"all {len(items)} items of {{{stmt.list_var}}} are already handled"
    return True, ""


# --------------------------------------------------------------------------
# Move application
# --------------------------------------------------------------------------


def _enclosing_loop_chain(state: EpisodeState, step_id: str) -> set[str]:
    chain = set()
    stmt = state.program.statement(step_id)
    if stmt.kind in LOOP_KINDS:
        chain.add(stmt.step_id)
    parent_id = state.program.parent_of[step_id]
    while parent_id is not None:
        parent = state.program.statement(parent_id)
        if parent.kind == StatementKind.FUNCTION_DEF:
            break
        if parent.kind in LOOP_KINDS:
            chain.add(parent.step_id)
        parent_id = state.program.parent_of[parent_id]
    return chain


def _reconcile_loop_frames(state: EpisodeState) -> None:
    depth = len(state.pc.call_stack)
    chain = _enclosing_loop_chain(state, state.pc.current)
    state.store.loop_frames = [
        f for f in state.store.loop_frames
        if f.get("depth", 0) != depth or f["header"] in chain
    ]


def _flush_header_node(state: EpisodeState, stmt: Statement) -> None:
    """Fold the latest header arrival back onto its anchor node."""
    anchor = state.tree._loop_anchor(stmt.step_id)
    if anchor is None:
        return
    pending = state._pending_header
    if pending is not None and pending["step_id"] == stmt.step_id:
        anchor.action_digest = pending["action"]
        anchor.observation_digest = pending["observation"]
        anchor.status = pending["status"]
        state._pending_header = None
    state.tree.set_current(anchor.node_id)


def _record_write(state: EpisodeState, path: str, value) -> None:
    state.store.set_var(path, value)
    state.tree.record_var_write(path, canonical_text(value))


def apply_move(state: EpisodeState, move: PCMove) -> None:
    stmt = state.current_statement
    for path, value in move.variable_updates:
        _record_write(state, path, value)

    edge = move.edge
    if edge == EdgeKind.TERMINATE:
        if stmt.kind in LOOP_KINDS:
            _flush_header_node(state, stmt)
        state.store.loop_frames = []
        state.mode = Mode.TERMINATED
        return

    if edge == EdgeKind.CALL:
        func = state.program.functions[stmt.func_name or ""]
        continuation = call_return_continuation(state.program, stmt)
        bound_args = [
            (param, _resolve_arg(state, expr)) for param, expr in stmt.call_args
        ]
        state.store.push_scope()
        state.pc.call_stack.append(
            CallFrame(
                func_name=func.func_name or "",
                return_edge=continuation,
                save_as=stmt.save_as,
                caller_step=stmt.step_id,
            )
        )
        for param, value in bound_args:
            state.store.set_var(param, value)
        state.pc.current = move.target
        _reconcile_loop_frames(state)
        return

    if edge == EdgeKind.RETURN:
        _apply_return(state, stmt)
        return

    if edge == EdgeKind.ENTER_BLOCK and stmt.kind in LOOP_KINDS:
        frame = state.store.loop_frame(stmt.step_id)
        if frame is None:
            frame = state.store.push_loop(stmt.step_id)
            frame["depth"] = len(state.pc.call_stack)
        frame["iteration"] += 1
        pending = state._pending_header
        state._pending_header = None
        state.tree.append_node(
            step_id=stmt.step_id,
            kind=NodeKind.LOOP_ITERATION,
            action_digest=(pending or {}).get("action", ""),
            observation_digest=(pending or {}).get("observation", ""),
            status=(pending or {}).get("status", NodeStatus.SUCCEEDED),
        )
        if stmt.kind == StatementKind.FOR_EACH:
            items = state.store.get_var(stmt.list_var)
            item = items[frame["iteration"] - 1]
            frame["item"] = item
            _record_write(state, stmt.loop_var, item)
        state.pc.current = move.target
        _reconcile_loop_frames(state)
        return

    # NextSequential, TakeBranch, SkipBranch, non-loop EnterBlock, LoopBack,
    # ExitLoop, and collapsed exits.
    if stmt.kind in LOOP_KINDS and edge != EdgeKind.ENTER_BLOCK:
        _flush_header_node(state, stmt)
    state.pc.current = move.target
    _reconcile_loop_frames(state)


def _apply_return(state: EpisodeState, stmt: Statement) -> None:
    while True:
        frame = state.pc.call_stack.pop()
        return_value = None
        if stmt.kind == StatementKind.FUNCTION_RETURNS and stmt.var_reads:
            return_value = state.store.get_var(stmt.var_reads[0])
        state.store.pop_scope()
        depth = len(state.pc.call_stack)
        state.store.loop_frames = [
            f for f in state.store.loop_frames if f.get("depth", 0) <= depth
        ]
        if frame.save_as:
            _record_write(state, frame.save_as, return_value)
        continuation = frame.return_edge
        if continuation.kind == EdgeKind.TERMINATE:
            state.mode = Mode.TERMINATED
            return
        if continuation.kind == EdgeKind.RETURN:
            # The caller itself was the last statement of an enclosing
            # function body; keep unwinding.
            stmt = state.program.statement(frame.caller_step)
            continue
        state.pc.current = continuation.target
        _reconcile_loop_frames(state)
        return


def _resolve_arg(state: EpisodeState, expr: str):
    expr = expr.strip()
    if expr.startswith("{") and expr.endswith("}"):
        return state.store.get_var(expr[1:-1])
    if expr.startswith('"') and expr.endswith('"') and len(expr) >= 2:
        return expr[1:-1]
    try:
        return Decimal(expr)
    except Exception:
        return expr


# --------------------------------------------------------------------------
# The step loop
# --------------------------------------------------------------------------


def step(state: EpisodeState) -> Mode:
    """Run one phase (generation, update, or recovery); returns the new mode."""
    if state.mode == Mode.TERMINATED:
        raise EpisodeFailure("the episode has already terminated")
    if state.step_count >= state.config.max_steps:
        raise StepBudgetExceeded(f"exceeded {state.config.max_steps} steps")
    if state.mode == Mode.ACTION_GENERATION:
        _step_action_generation(state)
    elif state.mode == Mode.PC_UPDATE:
        _step_pc_update(state)
    elif state.mode == Mode.RECOVERY:
        _step_recovery(state)
    return state.mode


def _step_action_generation(state: EpisodeState) -> None:
    stmt = state.current_statement
    observation = state.env.observe()
    skip = set(stmt.var_writes)
    skip.update(param for param, _ in stmt.call_args)  # call-site parameter names
    resolved = interpolate(stmt.text, state.store, skip=skip)
    doc = state.strategy.build_document(state)
    structured = {
        "instruction": resolved,
        "raw_instruction": stmt.text,
        "statement": _statement_meta(stmt),
        "vars": _resolved_vars(state, stmt),
        "observation": observation,
    }
    state.ag_calls += 1
    script = _call_backend(
        state, Purpose.GROUND_INSTRUCTION, "ground_instruction", structured, doc.dynamic_text()
    )
    report = execute_action_script(script, state.env, state)
    status = NodeStatus.SUCCEEDED if report.ok else NodeStatus.FAILED
    if report.ok and state.just_recovered:
        status = NodeStatus.RECOVERED
    state.just_recovered = False
    action_digest = digest(script.render())
    final_obs = report.results[-1].observation_digest if report.results else ""
    _attach_node(state, stmt, action_digest, final_obs, status)
    for path, canonical in report.var_writes:
        _note_write(state, stmt, path, canonical)
    state.history.append(
        {
            "step_index": state.ag_calls,
            "step_id": stmt.step_id,
            "instruction": resolved,
            "observation": observation.render(),
            "script": script.render(),
            "result": report.note(),
        }
    )
    state.records.append(
        {
            "phase": "ActionGeneration",
            "step_index": state.ag_calls,
            "step_id": stmt.step_id,
            "instruction": resolved,
            "document": doc.dynamic_text(),
            "script": [c.render() for c in script.commands],
            "rationale": script.rationale,
            "results": [
                {"command": r.command.render(), "ok": r.ok, "detail": r.detail,
                 "observation_digest": r.observation_digest}
                for r in report.results
            ],
            "outcome": report.note(),
            "beliefs": state.beliefs.snapshot(),
        }
    )
    if report.belief_gap:
        state.recovery_attempts = 0
        state.mode = Mode.RECOVERY
        return
    if report.done_status is not None:
        state.done_status = report.done_status
        if state.pc.current != _last_step(state):
            state.records.append(
                {"phase": "Note", "note": "done() declared before the program's end"}
            )
        state.mode = Mode.TERMINATED
        return
    if not report.ok:
        # Let the PC-update decide how to proceed after a plain failure.
        pass
    _propose_beliefs(state, script.commands)
    state.mode = Mode.PC_UPDATE


def _last_step(state: EpisodeState) -> str:
    executable = [s for s in state.program.statements if s.kind != StatementKind.FUNCTION_DEF]
    return executable[-1].step_id if executable else ""


def _attach_node(state, stmt, action_digest, obs_digest, status) -> None:
    if stmt.kind in LOOP_KINDS:
        anchor = state.tree._loop_anchor(stmt.step_id)
        if anchor is None:
            state.tree.append_node(
                step_id=stmt.step_id,
                kind=NodeKind.SEQUENTIAL,
                action_digest=action_digest,
                observation_digest=obs_digest,
                status=status,
            )
        else:
            state._pending_header = {
                "step_id": stmt.step_id,
                "action": action_digest,
                "observation": obs_digest,
                "status": status,
            }
        return
    if stmt.kind in (StatementKind.IF, StatementKind.ELSE_IF, StatementKind.ELSE):
        kind = NodeKind.CONDITIONAL
    else:
        kind = NodeKind.SEQUENTIAL
    state.tree.append_node(
        step_id=stmt.step_id,
        kind=kind,
        action_digest=action_digest,
        observation_digest=obs_digest,
        status=status,
    )


def _note_write(state: EpisodeState, stmt: Statement, path: str, canonical: str) -> None:
    if stmt.kind in LOOP_KINDS and state._pending_header is not None:
        return  # header noops never write; nothing to attach
    state.tree.record_var_write(path, canonical)


def _step_pc_update(state: EpisodeState) -> None:
    stmt = state.current_statement
    menu = legal_moves(state)
    if not menu:
        raise EpisodeFailure(f"no legal move from step {stmt.step_id}")
    frame = state.store.loop_frame(stmt.step_id)
    condition = None
    if stmt.condition is not None:
        condition = interpolate(stmt.condition, state.store, skip=set(stmt.var_writes))
    observation = state.env.observe()
    doc = state.strategy.build_document(state)
    last_outcome = state.history[-1]["result"] if state.history else ""
    rejections: list[str] = []
    move = None
    for _ in range(state.config.pc_retry_limit + 1):
        structured = {
            "statement": _statement_meta(stmt),
            "menu": menu,
            "iterations_done": frame["iteration"] if frame else 0,
            "condition": condition,
            "vars": _resolved_vars(state, stmt),
            "report": last_outcome,
            "observation": observation,
        }
        if rejections:
            structured["rejections"] = list(rejections)
        state.pcu_calls += 1
        candidate = _call_backend(
            state, Purpose.UPDATE_PC, "update_pc", structured, doc.dynamic_text()
        )
        accepted, reason = validate_pc_move(state, candidate)
        if accepted:
            move = candidate
            break
        rejections.append(reason)
    if move is None:
        raise EpisodeFailure(
            f"backend kept proposing illegal moves at step {stmt.step_id}: {rejections[-1]}"
        )
    apply_move(state, move)
    state.records.append(
        {
            "phase": "PCUpdate",
            "step_index": state.ag_calls,
            "step_id": stmt.step_id,
            "move": {"edge": move.edge.value, "target": move.target, "note": move.note},
            "rejections": rejections,
            "pc": state.pc.current,
            "mode_after": state.mode.value,
        }
    )
    state.step_count += 1
    if state.mode != Mode.TERMINATED:
        _propose_beliefs(state, [])
        state.mode = Mode.ACTION_GENERATION


def _step_recovery(state: EpisodeState) -> None:
    state.recovery_attempts += 1
    if state.recovery_attempts > state.config.recovery_attempt_limit:
        raise EpisodeFailure(
            f"gap not closed after {state.config.recovery_attempt_limit} recovery attempts: "
            f"{state.beliefs.recovery_note}"
        )
    stmt = state.current_statement
    observation = state.env.observe()
    gap = state.beliefs.gap or {}
    structured = {
        "gap_note": gap.get("note", state.beliefs.recovery_note),
        "invalidated": state.beliefs.invalidated(),
        "observation": observation,
        "instruction": stmt.text,
    }
    script = _call_backend(state, Purpose.RECOVER, "recover", structured)
    report = execute_action_script(script, state.env, state)
    state.records.append(
        {
            "phase": "Recovery",
            "step_index": state.ag_calls,
            "step_id": stmt.step_id,
            "attempt": state.recovery_attempts,
            "script": [c.render() for c in script.commands],
            "results": [
                {"command": r.command.render(), "ok": r.ok, "detail": r.detail,
                 "observation_digest": r.observation_digest}
                for r in report.results
            ],
            "outcome": report.note(),
        }
    )
    if report.ok and not report.belief_gap:
        state.tree.append_node(
            step_id=stmt.step_id,
            kind=NodeKind.SEQUENTIAL,
            action_digest=digest(script.render()),
            observation_digest=report.results[-1].observation_digest if report.results else "",
            status=NodeStatus.RECOVERED,
            note="recovery",
        )
        state.beliefs.clear_gap()
        _propose_beliefs(state, script.commands)
        state.just_recovered = True
        state.mode = Mode.ACTION_GENERATION
    # else: stay in recovery; the attempt counter bounds us.


def run_to_completion(state: EpisodeState) -> EpisodeState:
    """Drive the step loop until termination, budget, or failure."""
    try:
        while state.mode != Mode.TERMINATED:
            step(state)
    except (EpisodeFailure, StepBudgetExceeded, BackendError, DeviceError) as e:
        state.failure = f"{type(e).__name__}: {e}"
        state.mode = Mode.TERMINATED
        state.records.append({"phase": "Failure", "error": state.failure})
    return state
