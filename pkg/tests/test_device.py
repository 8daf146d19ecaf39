"""Simulated-device tests: flows, observability, perturbations, goldens."""

import json
import random

import pytest

from taskprog.actions import Command
from taskprog.device import Device, IllegalAction, TargetNotFound
from taskprog.scenarios import UnknownScenario, default_registry, reset


def cmd(name, *args):
    return Command(name, tuple(str(a) for a in args))


def run_commands(device, commands):
    for c in commands:
        device.execute(c)


class TestBasics:
    def test_reset_is_deterministic(self, registry):
        scenario = registry.get("todo_fanout")
        d1, o1 = reset(scenario, seed=3)
        d2, o2 = reset(scenario, seed=3)
        assert json.dumps(d1.snapshot(), sort_keys=True) == json.dumps(d2.snapshot(), sort_keys=True)
        assert o1.render() == o2.render()
        assert o1.foreground == "Home"

    def test_unknown_scenario(self, registry):
        with pytest.raises(UnknownScenario):
            registry.get("not_a_scenario")

    def test_home_screen_lists_apps_and_clock(self):
        device = Device()
        obs = device.observe()
        texts = [el.text for el in obs.elements]
        assert "Markor" in texts and "Expenses" in texts
        assert any("2025-10-14 (Tuesday)" in t for t in texts)

    def test_app_alias(self):
        device = Device(notes={"todo_list.md": "a\nb"})
        device.execute(cmd("start_app", "Notes"))
        assert device.foreground == "Markor"

    def test_unknown_app(self):
        with pytest.raises(TargetNotFound):
            Device().execute(cmd("start_app", "Minesweeper"))


class TestContactFlow:
    def test_create_contact_grows_list(self):
        device = Device(contacts=[{"name": "Alice", "phone": "1", "email": "a@x"}])
        run_commands(device, [
            cmd("start_app", "Contacts"),
            cmd("click", "add_contact"),
            cmd("input", "contact_name", "John Doe"),
            cmd("input", "contact_phone", "555-0123"),
            cmd("input", "contact_email", "john@x"),
            cmd("click", "save_contact"),
        ])
        assert len(device.contacts) == 2
        saved = device.contacts[-1]
        assert saved == {"name": "John Doe", "phone": "555-0123", "email": "john@x"}

    def test_click_nothing_changes_nothing(self):
        device = Device(contacts=[{"name": "Alice", "phone": "1", "email": "a@x"}])
        device.execute(cmd("start_app", "Contacts"))
        before = json.dumps(device.snapshot(), sort_keys=True)
        with pytest.raises(TargetNotFound):
            device.execute(cmd("click", "no_such_thing"))
        assert json.dumps(device.snapshot(), sort_keys=True) == before

    def test_input_needs_a_field(self):
        device = Device()
        device.execute(cmd("start_app", "Contacts"))
        with pytest.raises(TargetNotFound):
            device.execute(cmd("input", "contact_name", "x"))  # list view has no field
        device.execute(cmd("home", ))
        with pytest.raises(IllegalAction):
            device.execute(cmd("input", "anything", "x"))


class TestScrolling:
    def make_notes_device(self, count=12):
        notes = {f"note_{i:02d}.md": f"body {i}" for i in range(count)}
        device = Device(notes=notes)
        device.execute(cmd("start_app", "Markor"))
        return device

    def test_window_shows_five_items(self):
        device = self.make_notes_device()
        obs = device.observe()
        assert len(obs.visible_item_texts()) == 5
        assert obs.scroll == {"offset": 0, "window": 5, "total": 12}

    def test_swipe_shifts_window_and_clamps(self):
        device = self.make_notes_device()
        device.execute(cmd("swipe", "down"))
        assert device.observe().scroll["offset"] == 5
        device.execute(cmd("swipe", "down"))
        assert device.observe().scroll["offset"] == 7  # clamped at total-window
        device.execute(cmd("swipe", "down"))
        assert device.observe().scroll["offset"] == 7
        device.execute(cmd("swipe", "up"))
        assert device.observe().scroll["offset"] == 2

    def test_off_window_items_invisible(self):
        device = self.make_notes_device()
        texts = device.observe().visible_item_texts()
        assert "note_11.md" not in texts
        with pytest.raises(TargetNotFound):
            device.execute(cmd("click", "note_11.md"))

    def test_element_ids_stable_across_rerenders(self):
        device = self.make_notes_device()
        ids1 = {el.text: el.element_id for el in device.observe().elements}
        device.execute(cmd("swipe", "down"))
        device.execute(cmd("swipe", "up"))
        ids2 = {el.text: el.element_id for el in device.observe().elements}
        assert ids1 == ids2


class TestHiddenState:
    def test_clipboard_never_observed(self):
        device = Device(notes={"a.md": "secret line"})
        run_commands(device, [
            cmd("start_app", "Markor"),
            cmd("click", "a.md"),
            cmd("long_click", "secret line"),
        ])
        assert device.clipboard == "secret line"
        rendered = device.observe().render()
        assert "clipboard" not in rendered.lower()

    def test_random_episode_never_leaks_clipboard_or_offscreen(self, registry):
        rng = random.Random(11)
        scenario = registry.get("expense_purge_n20")
        device = scenario.build_device(seed=0)
        device.clipboard = "NEVER-SHOW-THIS"
        hidden_labels = {f"Expense {k:02d}" for k in range(6, 21)}
        device.execute(cmd("start_app", "Expenses"))
        for _ in range(60):
            roll = rng.random()
            try:
                if roll < 0.5:
                    items = device.observe().visible_item_texts()
                    if items:
                        device.execute(cmd("click", rng.choice(items)))
                elif roll < 0.7:
                    device.execute(cmd("back"))
                else:
                    obs = device.observe()
                    assert "NEVER-SHOW-THIS" not in obs.render()
                    if obs.view == "expense_list" and obs.scroll["offset"] == 0:
                        visible = set(obs.visible_item_texts())
                        assert not {t.split(" - ")[0] for t in visible} & hidden_labels
            except (TargetNotFound, IllegalAction):
                pass


class TestModalDialogs:
    def test_popup_then_dismiss_restores_normal_screen(self):
        device = Device(contacts=[{"name": "Alice", "phone": "1", "email": "a@x"}])
        device.execute(cmd("start_app", "Contacts"))
        device.inject_perturbation("PopupDialog", after_command=1)
        with pytest.raises(IllegalAction):
            device.execute(cmd("click", "add_contact"))
        assert device.observe().dialog is not None
        device.execute(cmd("click", "Dismiss"))
        obs = device.observe()
        assert obs.dialog is None
        device.execute(cmd("click", "add_contact"))
        assert device.observe().view == "contact_form"

    def test_modal_blocks_everything_but_its_buttons(self):
        device = Device()
        device.execute(cmd("start_app", "Contacts"))
        device.inject_perturbation("PopupDialog", after_command=1)
        with pytest.raises(IllegalAction):
            device.execute(cmd("click", "add_contact"))
        before = json.dumps(device.snapshot(), sort_keys=True)
        rng = random.Random(3)
        attempts = [
            cmd("click", "add_contact"), cmd("back"), cmd("home"),
            cmd("start_app", "Markor"), cmd("swipe", "down"),
            cmd("input", "contact_name", "x"), cmd("long_click", "Alice"),
        ]
        for _ in range(20):
            with pytest.raises(IllegalAction):
                device.execute(rng.choice(attempts))
        after = json.dumps(device.snapshot(), sort_keys=True)
        assert before == after  # dialog_open flag included and unchanged
        device.execute(cmd("click", "Dismiss"))
        assert device.dialog is None

    def test_wait_allowed_under_modal(self):
        device = Device()
        device.execute(cmd("start_app", "Contacts"))
        device.inject_perturbation("PopupDialog", after_command=1)
        device.execute(cmd("wait", "0"))
        assert device.dialog is not None


class TestPerturbations:
    def test_crash_loses_unsaved_form(self):
        device = Device()
        device.inject_perturbation("CrashToHome", after_command=3)
        run_commands(device, [
            cmd("start_app", "Contacts"),
            cmd("click", "add_contact"),
            cmd("input", "contact_name", "John"),
        ])
        with pytest.raises((TargetNotFound, IllegalAction)):
            device.execute(cmd("input", "contact_phone", "555"))
        assert device.foreground == "Home"
        device.execute(cmd("start_app", "Contacts"))
        obs = device.observe()
        assert obs.view == "contact_list"  # form and its buffer are gone
        assert device.contacts == []

    def test_schedule_at_zero_fires_before_first_command(self):
        device = Device()
        device.inject_perturbation("PopupDialog", after_command=0)
        with pytest.raises(IllegalAction):
            device.execute(cmd("start_app", "Contacts"))
        device.execute(cmd("click", "Dismiss"))
        device.execute(cmd("start_app", "Contacts"))
        assert device.foreground == "Contacts"

    def test_stale_toast_shows_once(self):
        device = Device()
        device.inject_perturbation("StaleToast", after_command=1)
        device.execute(cmd("start_app", "Contacts"))
        device.execute(cmd("wait", "1"))  # toast fires before this command
        assert device.observe().toast == "Saved"
        device.execute(cmd("wait", "1"))
        assert device.observe().toast is None

    def test_cannot_schedule_in_the_past(self):
        from taskprog.device import EnvironmentFault

        device = Device()
        device.execute(cmd("start_app", "Contacts"))
        with pytest.raises(EnvironmentFault):
            device.inject_perturbation("CrashToHome", after_command=0)


# ---------------------------------------------------------------------------
# Golden action sequences: every scenario is solvable by hand.
# ---------------------------------------------------------------------------


def golden_commands(scenario) -> list[Command]:
    sid = scenario.id
    device_spec = scenario.device_spec
    if sid.startswith("contact_create"):
        commands = [
            cmd("start_app", "Contacts"),
            cmd("click", "add_contact"),
            cmd("input", "contact_name", "John Doe"),
            cmd("input", "contact_phone", "555-0123"),
            cmd("input", "contact_email", "john.doe@example.com"),
            cmd("click", "save_contact"),
        ]
        if sid.endswith("_crash"):
            # The crash lands after command 3 and wipes the form: notice the
            # home screen, reopen the form, and refill everything.
            commands = commands[:3] + [
                cmd("start_app", "Contacts"),
                cmd("click", "add_contact"),
                cmd("input", "contact_name", "John Doe"),
                cmd("input", "contact_phone", "555-0123"),
                cmd("input", "contact_email", "john.doe@example.com"),
                cmd("click", "save_contact"),
            ]
        return commands
    if sid == "todo_fanout":
        return [
            cmd("start_app", "Markor"),
            cmd("click", "todo_list.md"),
            cmd("start_app", "Calendar"),
            cmd("click", "add_event"),
            cmd("input", "event_title", "Team Sync"),
            cmd("input", "event_date", "2025-10-16"),
            cmd("input", "event_time", "10:00"),
            cmd("click", "save_event"),
            cmd("start_app", "Contacts"),
            cmd("click", "add_contact"),
            cmd("input", "contact_name", "Dana Reyes"),
            cmd("input", "contact_phone", "555-0144"),
            cmd("click", "save_contact"),
            cmd("start_app", "Expenses"),
            cmd("click", "add_expense"),
            cmd("input", "expense_label", "Taxi"),
            cmd("input", "expense_amount", "23.50"),
            cmd("input", "expense_date", "2025-10-14"),
            cmd("click", "save_expense"),
        ]
    if sid == "note_to_message":
        body = device_spec["notes"]["wifi_password.md"]
        return [
            cmd("start_app", "Markor"),
            cmd("swipe", "down"),
            cmd("click", "wifi_password.md"),
            cmd("start_app", "Messages"),
            cmd("click", "new_message"),
            cmd("input", "recipient", "Alice"),
            cmd("input", "message_input", body),
            cmd("click", "send_message"),
        ]
    if sid == "broadcast_message":
        commands = [cmd("start_app", "Contacts")]
        for contact in device_spec["contacts"]:
            commands += [
                cmd("start_app", "Messages"),
                cmd("click", "new_message"),
                cmd("input", "recipient", contact["name"]),
                cmd("input", "message_input", "Team meeting at 3pm"),
                cmd("click", "send_message"),
            ]
        return commands
    if sid == "saturday_cleanup":
        return [
            cmd("start_app", "Calendar"),
            cmd("click", "Gym Class [2025-10-18 09:00]"),
            cmd("click", "delete_event"),
            cmd("click", "Market Run [2025-10-18 11:00]"),
            cmd("click", "delete_event"),
        ]
    if sid == "expense_report":
        return [
            cmd("start_app", "Expenses"),
            cmd("start_app", "Markor"),
            cmd("click", "new_note"),
            cmd("input", "note_title", "expense_report.md"),
            cmd("input", "note_body", "Total: 78.49"),
            cmd("click", "save_note"),
        ]
    if sid.startswith("expense_purge"):
        from taskprog.device import _expense_label

        commands = [cmd("start_app", "Expenses")]
        for expense in device_spec["expenses"]:
            commands += [
                cmd("click", _expense_label(expense)),
                cmd("click", "delete_expense"),
            ]
        return commands
    if sid.startswith("calendar_fill"):
        commands = [cmd("start_app", "Calendar")]
        popup_due = {p["after_command"] for p in scenario.perturbations
                     if p["kind"] == "PopupDialog"}
        count = 0

        def push(c):
            nonlocal count
            if count in popup_due:
                commands.append(cmd("click", "Dismiss"))
                popup_due.discard(count)
            commands.append(c)
            count += 1

        count = 1  # start_app already queued
        for k in range(1, scenario.n + 1):
            for c in (
                cmd("click", "add_event"),
                cmd("input", "event_title", f"Standup {k}"),
                cmd("input", "event_date", f"2025-11-{k}"),
                cmd("input", "event_time", "09:00"),
                cmd("click", "save_event"),
            ):
                push(c)
        return commands
    if sid.startswith("note_log"):
        commands = [cmd("start_app", "Markor"), cmd("click", "daily_log.md")]
        for k in range(1, scenario.n + 1):
            commands.append(cmd("input", "note_body", f"entry {k}"))
        return commands
    raise AssertionError(f"no golden sequence for {sid}")


class TestGoldensAndEvaluators:
    def test_untouched_device_fails_every_scenario(self, registry):
        for scenario in registry.all():
            device = scenario.build_device(seed=0)
            result = scenario.evaluate(device)
            assert not result.success, scenario.id
            assert result.breakdown

    def test_every_scenario_has_a_passing_golden(self, registry):
        for scenario in registry.all():
            device = scenario.build_device(seed=0)
            for c in golden_commands(scenario):
                device.execute(c)
            result = scenario.evaluate(device)
            failed = [d for d, ok in result.breakdown if not ok]
            assert result.success, f"{scenario.id}: {failed}"

    def test_partial_completion_scores_partially(self, registry):
        scenario = registry.get("todo_fanout")
        device = scenario.build_device(seed=0)
        for c in golden_commands(scenario)[:8]:  # only the calendar part
            device.execute(c)
        result = scenario.evaluate(device)
        assert not result.success
        assert result.score == "1/3"
