"""Interpreter tests: modes, PC validation, script execution, episodes."""

import json
from decimal import Decimal

import pytest

from taskprog.actions import Command
from taskprog.backends.scripted import ScriptedBackend, load_rule_table
from taskprog.cfg import EdgeKind, PCMove
from taskprog.device import Device
from taskprog.exectree import NodeKind
from taskprog.interpreter import (
    EmptyProgram,
    EpisodeConfig,
    Mode,
    StepBudgetExceeded,
    execute_action_script,
    init_episode,
    legal_moves,
    run_to_completion,
    step,
    validate_pc_move,
)
from taskprog.lang import parse_program
from taskprog.strategies import ProgramGuidedStrategy


def make_episode(source, device=None, backend=None, config=None):
    return init_episode(
        parse_program(source),
        device or Device(),
        backend or ScriptedBackend(),
        ProgramGuidedStrategy(),
        config,
    )


GREETING = """\
set variable {userName} to "Alice"
store 100 into {initialScore}
tell user "Welcome, {userName}! Your score is {initialScore}."
define function named "calculateArea":
    function inputs: {length} (number), {width} (number)
    calculate {length} * {width}, record as {area}
    function returns {area}
execute function "calculateArea", with {length} as 10 and {width} as 5, save result as {roomArea}
tell user "The room area is {roomArea} square units."
repeat 3 times:
    tell user "This is message number {loop.iteration}"
"""


class TestInit:
    def test_pc_at_first_statement(self):
        state = make_episode("tell user \"a\"\ntell user \"b\"\ntell user \"c\"\n")
        assert state.pc.current == "1"
        assert state.step_count == 0
        assert state.mode == Mode.ACTION_GENERATION

    def test_anchors_preregistered(self):
        state = make_episode(GREETING)
        assert state.store.anchors == {"userName", "initialScore", "roomArea"}

    def test_first_statement_loop_header(self):
        state = make_episode("repeat 2 times:\n    tell user \"x\"\n")
        assert state.pc.current == "1"
        assert state.store.loop_frames == []

    def test_empty_program(self):
        with pytest.raises(EmptyProgram):
            make_episode("# just a comment\n")


class TestScriptedEpisodes:
    def test_hello_world_step(self):
        state = make_episode('tell user "Hello, world!"\ntell user "bye"\n')
        step(state)  # action generation
        assert state.answers == ["Hello, world!"]
        assert state.mode == Mode.PC_UPDATE
        step(state)  # pc update
        move = state.records[-1]["move"]
        assert (move["edge"], move["target"]) == ("NextSequential", "2")
        assert state.mode == Mode.ACTION_GENERATION

    def test_greeting_program_full_run(self):
        state = run_to_completion(make_episode(GREETING))
        assert state.failure is None
        assert state.mode == Mode.TERMINATED
        assert state.answers == [
            "Welcome, Alice! Your score is 100.",
            "The room area is 50 square units.",
            "This is message number 1",
            "This is message number 2",
            "This is message number 3",
        ]
        assert state.store.get_var("roomArea") == Decimal(50)

    def test_function_call_stack_balanced_at_end(self):
        state = run_to_completion(make_episode(GREETING))
        assert state.pc.call_stack == []
        assert state.store.scopes == []
        assert state.store.loop_frames == []

    def test_foreach_three_loopbacks_then_exit(self):
        source = (
            'record list "a", "b", "c" as {things}\n'
            "iterate through each item in {things} as {thing}:\n"
            '    tell user "saw {thing}"\n'
            'tell user "done"\n'
        )
        state = run_to_completion(make_episode(source))
        assert state.failure is None
        moves = [r["move"]["edge"] for r in state.records if r["phase"] == "PCUpdate"]
        assert moves.count("LoopBack") == 3
        assert moves.count("EnterBlock") == 3
        assert moves.count("ExitLoop") == 1
        assert state.answers == ["saw a", "saw b", "saw c", "done"]

    def test_loop_iteration_values_observed(self):
        state = run_to_completion(make_episode(
            "repeat 3 times:\n    tell user \"at {loop.iteration}\"\n"))
        assert state.answers == ["at 1", "at 2", "at 3"]

    def test_mode_alternation_counts(self):
        state = run_to_completion(make_episode(GREETING))
        assert abs(state.ag_calls - state.pcu_calls) <= 1

    def test_node_count_matches_cycles_without_recovery(self):
        state = run_to_completion(make_episode(GREETING))
        node_count = len(state.tree.nodes) - 1  # minus synthetic root
        assert node_count == state.step_count

    def test_step_budget(self):
        config = EpisodeConfig(max_steps=3)
        state = make_episode(GREETING, config=config)
        with pytest.raises(StepBudgetExceeded):
            for _ in range(100):
                step(state)

    def test_run_to_completion_records_budget_failure(self):
        config = EpisodeConfig(max_steps=3)
        state = run_to_completion(make_episode(GREETING, config=config))
        assert state.failure is not None and "StepBudget" in state.failure


class TestDoneEarly:
    def test_done_terminates_and_is_noted(self):
        rules = load_rule_table()
        rules["ground"] = [
            {"name": "g_done_now", "pattern": "^finish up now$", "handler": "commands",
             "commands": [["answer", "bye"], ["done", "success"]]},
        ] + rules["ground"]
        backend = ScriptedBackend(rules=rules)
        state = run_to_completion(make_episode(
            "finish up now\ntell user \"never reached\"\n", backend=backend))
        assert state.done_status == "success"
        assert state.answers == ["bye"]
        assert any(r.get("note", "").startswith("done() declared") for r in state.records)


class TestValidateMoves:
    def setup_state(self):
        return make_episode("tell user \"a\"\ntell user \"b\"\n")

    def test_legal_sequential_move(self):
        state = self.setup_state()
        ok, reason = validate_pc_move(state, PCMove(EdgeKind.NEXT_SEQUENTIAL, "2"))
        assert ok, reason

    def test_return_without_call_rejected(self):
        state = make_episode(GREETING)
        state.pc.current = "4.3"  # function returns {area}
        ok, reason = validate_pc_move(state, PCMove(EdgeKind.RETURN, None))
        assert not ok and "no active call" in reason

    def test_return_edge_hidden_from_menu_without_call(self):
        state = make_episode(GREETING)
        state.pc.current = "4.3"
        assert legal_moves(state) == []

    def test_take_branch_into_untaken_branch_rejected(self):
        source = "if {x} > 1:\n    a\nelse:\n    b\nafter\n"
        state = make_episode(source)
        state.store.set_var("x", Decimal(0))
        # Once the else-branch body is current, jumping back into the
        # then-branch is not a CFG edge.
        state.pc.current = "2.1"
        ok, reason = validate_pc_move(state, PCMove(EdgeKind.TAKE_BRANCH, "1.1"))
        assert not ok and "not legal" in reason

    def test_foreach_enterblock_guard(self):
        source = (
            'record list "a" as {xs}\n'
            "iterate through each item in {xs} as {x}:\n"
            "    tell user \"{x}\"\n"
        )
        state = make_episode(source)
        state.pc.current = "2"
        state.store.set_var("xs", ["a"])
        frame = state.store.push_loop("2")
        frame["iteration"] = 1
        ok, reason = validate_pc_move(state, PCMove(EdgeKind.ENTER_BLOCK, "2.1"))
        assert not ok and "already handled" in reason


class TestExecuteActionScript:
    def test_note_open_sequence(self):
        device = Device(notes={"todo_list.md": "- call mom\n- buy milk"})
        state = make_episode("tell user \"x\"\n", device=device)
        script = make_script([("start_app", "Notes"), ("click", "todo_list.md")])
        report = execute_action_script(script, device, state)
        assert report.ok
        assert [r.ok for r in report.results] == [True, True]
        assert device.observe().view == "note_view"
        assert "- call mom" in device.observe().render()

    def test_target_not_found_aborts_script(self):
        device = Device()
        state = make_episode("tell user \"x\"\n", device=device)
        before = json.dumps(device.snapshot(), sort_keys=True)
        script = make_script([("click", "phantom"), ("home",)])
        report = execute_action_script(script, device, state)
        assert not report.ok
        assert "TargetNotFound" in report.failure
        assert len(report.results) == 1  # the second command never ran
        assert json.dumps(device.snapshot(), sort_keys=True) == before

    def test_crash_mid_script_flags_gap_and_skips_rest(self):
        device = Device()
        device.inject_perturbation("CrashToHome", after_command=3)
        state = make_episode("tell user \"x\"\n", device=device)
        state.beliefs.apply_proposals(
            [__import__("taskprog.belief", fromlist=["Proposal"]).Proposal(
                "Contacts session", "the Contacts app is in the foreground and responsive")],
            node_id=0,
        )
        script = make_script([
            ("start_app", "Contacts"),
            ("click", "add_contact"),
            ("input", "contact_name", "John"),
            ("input", "contact_phone", "555"),
            ("input", "contact_email", "j@x"),
        ])
        report = execute_action_script(script, device, state)
        assert report.belief_gap
        assert len(report.results) == 4  # email input never attempted
        assert state.beliefs.gap is not None

    def test_read_screen_union_on_lists(self):
        device = Device(notes={f"n{i}.md": "x" for i in range(7)})
        state = make_episode("tell user \"x\"\n", device=device)
        script = make_script([
            ("start_app", "Markor"),
            ("read_screen", "names"),
            ("swipe", "down"),
            ("read_screen", "names"),
        ])
        report = execute_action_script(script, device, state)
        assert report.ok
        assert state.store.get_var("names") == [f"n{i}.md" for i in range(7)]


def make_script(commands):
    from taskprog.actions import ActionScript

    return ActionScript(commands=[Command(n[0], tuple(n[1:])) for n in commands])


class TestDeterminism:
    def test_two_runs_identical_trajectories(self, registry):
        from taskprog.harness import run_episode

        backend = ScriptedBackend()
        a = run_episode("broadcast_message", "ProgramGuided", backend, 3)
        b = run_episode("broadcast_message", "ProgramGuided", backend, 3)
        assert a.to_jsonl() == b.to_jsonl()

    def test_linear_context_growth_in_iterations_with_bounded_docs(self, registry):
        from taskprog.harness import run_episode

        backend = ScriptedBackend()
        t3 = run_episode("expense_purge_n3", "ProgramGuided", backend, 0)
        t20 = run_episode("expense_purge_n20", "ProgramGuided", backend, 0)
        assert t20.step_count > 4 * t3.step_count  # linear in n
        last3 = t3.dynamic_series()[-1][1]
        last20 = t20.dynamic_series()[-1][1]
        assert last20 <= 1.5 * last3  # per-step context stays bounded
