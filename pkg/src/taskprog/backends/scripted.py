"""Deterministic scripted backend.

Decisions come from an ordered rule table loaded from a JSON data file that
ships with the task suite.  Each rule names a handler from a fixed vocabulary
and parameterizes it (regex pattern, command templates, options); the first
matching rule wins and a missing match raises :class:`NoRule`.

Rules read only the structured inputs of a request (instruction text,
observation, move menu, variable values) - never the serialized context
document - so context strategy cannot change scripted decisions.
"""

from __future__ import annotations

import datetime
import json
import re
from decimal import Decimal
from importlib import resources

from ..actions import ActionScript, Command
from ..belief import (
    VERDICT_CONSISTENT,
    VERDICT_CONTRADICTED,
    VERDICT_SUPERSEDED,
    VERDICT_UNOBSERVABLE,
    Proposal,
)
from ..cfg import EdgeKind, PCMove
from ..lang import StatementKind
from ..values import canonical_json, canonical_text, parse_number
from .base import Backend, BackendRequest, NoRule, Purpose

# Commands that deliberately change what is on screen; a belief that stops
# holding right after one of these retires instead of flagging a gap.
_NAVIGATION_COMMANDS = frozenset({"start_app", "home", "back", "click"})

_FORM_OPENERS = {
    "add_contact": ("contact_form", "contact form"),
    "add_event": ("event_form", "event form"),
    "add_expense": ("expense_form", "expense form"),
    "new_note": ("note_compose", "note editor"),
    "new_message": ("new_message", "message composer"),
}
_FORM_REOPEN = {view: opener for opener, (view, _) in _FORM_OPENERS.items()}

_CONTROL_KINDS = {
    StatementKind.IF, StatementKind.ELSE_IF, StatementKind.ELSE,
    StatementKind.WHILE, StatementKind.REPEAT_N, StatementKind.FOR_EACH,
    StatementKind.FUNCTION_CALL, StatementKind.FUNCTION_INPUTS,
    StatementKind.FUNCTION_RETURNS,
}


def load_rule_table(name: str = "rules.json") -> dict:
    text = resources.files("taskprog.data").joinpath(name).read_text("utf-8")
    return json.loads(text)


def load_program_text(file_name: str) -> str:
    return resources.files("taskprog.data.programs").joinpath(file_name).read_text("utf-8")


class ScriptedBackend(Backend):
    """Pure-function backend over the rule table; safe to share across episodes."""

    name = "scripted"

    def __init__(self, rules: dict | None = None, coverage: set[str] | None = None):
        self.rules = rules if rules is not None else load_rule_table()
        self.coverage = coverage  # optional set collecting fired rule names
        self._compiled: dict[int, re.Pattern] = {}

    # -- engine ---------------------------------------------------------------

    def _pattern(self, rule: dict) -> re.Pattern:
        key = id(rule)
        if key not in self._compiled:
            self._compiled[key] = re.compile(rule["pattern"], re.DOTALL | re.IGNORECASE)
        return self._compiled[key]

    def _fired(self, rule: dict) -> None:
        if self.coverage is not None:
            self.coverage.add(rule["name"])

    def _match(self, purpose_key: str, text: str, structured: dict):
        """First rule whose kind/pattern matches; returns (rule, regex match)."""
        stmt = structured.get("statement") or {}
        for rule in self.rules.get(purpose_key, []):
            if "kind" in rule:
                kinds = rule["kind"].split("|")
                if stmt.get("kind") not in kinds:
                    continue
            match = None
            if "pattern" in rule:
                subject = structured.get("raw_instruction", "") if rule.get("on") == "raw" else text
                match = self._pattern(rule).search(subject)
                if match is None:
                    continue
            self._fired(rule)
            return rule, match
        raise NoRule(f"no {purpose_key} rule matches {text!r}")

    # -- purposes ----------------------------------------------------------------

    def generate_program(self, request: BackendRequest):
        task = request.structured["task"]
        for rule in self.rules.get("generate_program", []):
            match = self._pattern(rule).search(task)
            if match is None:
                continue
            self._fired(rule)
            text = load_program_text(rule["program_file"])
            if rule.get("substitute_n"):
                text = text.replace("%N%", match.group("n"))
            return text, None
        raise NoRule(f"no program rule matches task {task!r}")

    def ground_instruction(self, request: BackendRequest):
        structured = request.structured
        instruction = structured["instruction"]
        rule, match = self._match("ground", instruction, structured)
        handler = _GROUND_HANDLERS[rule["handler"]]
        script = handler(rule, match, structured)
        script.validate()
        return script, None

    def update_pc(self, request: BackendRequest):
        structured = request.structured
        condition = structured.get("condition") or ""
        rule, match = self._match("update_pc", condition, structured)
        handler = _PC_HANDLERS[rule["handler"]]
        return handler(rule, match, structured), None

    def propose_beliefs(self, request: BackendRequest):
        proposals: list[Proposal] = []
        for rule in self.rules.get("propose", []):
            handler = _PROPOSE_HANDLERS[rule["handler"]]
            found = handler(rule, request.structured)
            if found:
                self._fired(rule)
                proposals.extend(found)
        return proposals, None

    def check_beliefs(self, request: BackendRequest):
        structured = request.structured
        verdicts: dict[int, str] = {}
        for hyp in structured["hypotheses"]:
            for rule in self.rules.get("check", []):
                handler = _CHECK_HANDLERS[rule["handler"]]
                verdict = handler(rule, hyp, structured)
                if verdict is not None:
                    self._fired(rule)
                    verdicts[hyp.id] = verdict
                    break
        return verdicts, None

    def recover(self, request: BackendRequest):
        structured = request.structured
        note = structured.get("gap_note", "")
        for rule in self.rules.get("recover", []):
            if "pattern" in rule and not self._pattern(rule).search(note):
                continue
            self._fired(rule)
            handler = _RECOVER_HANDLERS[rule["handler"]]
            script = handler(rule, structured)
            script.validate()
            return script, None
        raise NoRule(f"no recovery rule for gap {note!r}")


# --------------------------------------------------------------------------
# Template substitution
# --------------------------------------------------------------------------

_GROUP_REF = re.compile(r"%\{(\w+)\}")


def _substitute(template: str, match: re.Match | None, structured: dict) -> str:
    def sub(m: re.Match) -> str:
        name = m.group(1)
        if match is not None and name in (match.groupdict() or {}):
            return match.group(name)
        raise NoRule(f"template group {name!r} not captured")

    out = _GROUP_REF.sub(sub, template)
    if "%TARGET%" in out:
        target = (structured.get("statement") or {}).get("assign_target")
        if not target:
            raise NoRule("statement has no assignment target for %TARGET%")
        out = out.replace("%TARGET%", target)
    return out


def _script(commands: list[Command], why: str) -> ActionScript:
    return ActionScript(commands=commands, rationale=why)


def _assign(structured: dict, value) -> ActionScript:
    target = (structured.get("statement") or {}).get("assign_target")
    if not target:
        raise NoRule("statement has no assignment target")
    return _script([Command("assign", (target, canonical_json(value)))], "computed the value directly")


def _visible_items(structured: dict) -> list[str]:
    return structured["observation"].visible_item_texts()


# --------------------------------------------------------------------------
# Ground handlers
# --------------------------------------------------------------------------


def _h_noop(rule, match, structured):
    return _script([Command("wait", ("0",))], "control flow only; nothing to do on screen")


def _h_commands(rule, match, structured):
    commands = [
        Command(parts[0], tuple(_substitute(a, match, structured) for a in parts[1:]))
        for parts in rule["commands"]
    ]
    return _script(commands, rule.get("why", "direct translation"))


def _h_click_or_scroll(rule, match, structured):
    target = _substitute(rule["target"], match, structured)
    obs = structured["observation"]
    if obs.find(target) is not None:
        return _script([Command("click", (target,))], "target is visible")
    return _script(
        [Command("swipe", ("down",)), Command("click", (target,))],
        "target is off-screen; scroll first",
    )


def _h_read_screen_into(rule, match, structured):
    target = (structured.get("statement") or {}).get("assign_target")
    if not target:
        raise NoRule("read needs an assignment target")
    return _script([Command("read_screen", (target,))], "capture the open view")


def _h_read_list_union(rule, match, structured):
    target = (structured.get("statement") or {}).get("assign_target")
    if not target:
        raise NoRule("read needs an assignment target")
    commands = [Command("read_screen", (target,))]
    for _ in range(int(rule.get("swipes", 1))):
        commands.append(Command("swipe", ("down",)))
        commands.append(Command("read_screen", (target,)))
    return _script(commands, "collect every window of the list")


def _h_note_body_text(rule, match, structured):
    obs = structured["observation"]
    lines = [el.text for el in obs.elements if el.element_id.startswith("line-")]
    return _assign(structured, "\n".join(lines))


def _h_count_list_items(rule, match, structured):
    return _assign(structured, Decimal(len(_visible_items(structured))))


_AMOUNT_RE = re.compile(r"\$(-?\d+(?:\.\d+)?)")


def _h_extract_amounts(rule, match, structured):
    amounts = []
    for text in _visible_items(structured):
        m = _AMOUNT_RE.search(text)
        if m:
            amounts.append(Decimal(m.group(1)))
    return _assign(structured, amounts)


def _h_filter_items_by(rule, match, structured):
    needle = match.group(rule.get("needle_group", "d"))
    return _assign(structured, [t for t in _visible_items(structured) if needle in t])


def _h_home_date(rule, match, structured):
    obs = structured["observation"]
    for el in obs.elements:
        if el.element_id == "clock":
            return _assign(structured, el.text.split()[0])
    raise NoRule("no clock on this screen")


def _h_week_saturday(rule, match, structured):
    day = datetime.date.fromisoformat(match.group("date"))
    saturday = day + datetime.timedelta(days=(5 - day.weekday()) % 7)
    return _assign(structured, saturday.isoformat())


def _h_sum_list(rule, match, structured):
    name = match.group(rule.get("list_group", "v"))
    items = structured.get("vars", {}).get(name)
    if not isinstance(items, list):
        raise NoRule(f"{name!r} does not hold a list to sum")
    total = Decimal(0)
    for item in items:
        total += item if isinstance(item, Decimal) else parse_number(canonical_text(item))
    return _assign(structured, total)


_ARITH_OPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "x": lambda a, b: a * b,
    "/": lambda a, b: a / b,
}


def _h_calc_arith(rule, match, structured):
    a = Decimal(match.group("a"))
    b = Decimal(match.group("b"))
    op = match.group("op")
    return _assign(structured, _ARITH_OPS[op](a, b))


def _h_answer_text(rule, match, structured):
    return _script([Command("answer", (match.group("msg"),))], "report to the user")


def _h_click_first_item_then(rule, match, structured):
    items = _visible_items(structured)
    if not items:
        raise NoRule("the list is empty; nothing to click")
    commands = [Command("click", (items[0],))]
    for parts in rule.get("then", []):
        commands.append(Command(parts[0], tuple(parts[1:])))
    return _script(commands, "operate on the first visible entry")


_LITERAL_LIST_RE = re.compile(r'"([^"]*)"')


def _parse_literal(expr: str):
    expr = expr.strip()
    if expr.lower().startswith("list "):
        return [m for m in _LITERAL_LIST_RE.findall(expr)]
    if expr.startswith('"') and expr.endswith('"') and len(expr) >= 2:
        return expr[1:-1]
    if re.fullmatch(r"-?\d+(\.\d+)?", expr):
        return Decimal(expr)
    if expr.lower() in ("true", "false"):
        return expr.lower() == "true"
    return expr


def _h_assign_literal(rule, match, structured):
    stmt = structured.get("statement") or {}
    expr = stmt.get("assign_expr") or ""
    if expr.lower().startswith("record "):
        expr = expr[7:]
    return _assign(structured, _parse_literal(expr))


_GROUND_HANDLERS = {
    "noop": _h_noop,
    "commands": _h_commands,
    "click_or_scroll": _h_click_or_scroll,
    "read_screen_into": _h_read_screen_into,
    "read_list_union": _h_read_list_union,
    "note_body_text": _h_note_body_text,
    "count_list_items": _h_count_list_items,
    "extract_amounts": _h_extract_amounts,
    "filter_items_by": _h_filter_items_by,
    "home_date": _h_home_date,
    "week_saturday": _h_week_saturday,
    "sum_list": _h_sum_list,
    "calc_arith": _h_calc_arith,
    "answer_text": _h_answer_text,
    "click_first_item_then": _h_click_first_item_then,
    "assign_literal": _h_assign_literal,
}


# --------------------------------------------------------------------------
# Program-counter handlers
# --------------------------------------------------------------------------


def _menu(structured: dict) -> list[dict]:
    return structured["menu"]


def _move_from(entry: dict, note: str) -> PCMove:
    return PCMove(edge=EdgeKind(entry["edge"]), target=entry["target"], note=note)


def _pick(menu: list[dict], edge: str) -> dict | None:
    for entry in menu:
        if entry["edge"] == edge:
            return entry
    return None


def _enter_or_leave(structured: dict, enter: bool, why: str) -> PCMove:
    menu = _menu(structured)
    entry = _pick(menu, "EnterBlock")
    if enter:
        if entry is None:
            raise NoRule("loop header offers no EnterBlock")
        return _move_from(entry, why)
    others = [e for e in menu if e["edge"] != "EnterBlock"]
    if not others:
        raise NoRule("loop header offers no way out")
    return _move_from(others[0], why)


def _h_pc_advance(rule, match, structured):
    menu = _menu(structured)
    if len(menu) == 1:
        return _move_from(menu[0], "only legal move")
    entry = _pick(menu, "NextSequential")
    if entry is not None:
        return _move_from(entry, "step finished; continue")
    raise NoRule("no obvious move in menu")


def _h_loop_count(rule, match, structured):
    stmt = structured["statement"]
    done = structured.get("iterations_done", 0)
    count = stmt.get("count") or 0
    return _enter_or_leave(structured, done < count, f"{done} of {count} iterations done")


def _h_loop_list(rule, match, structured):
    stmt = structured["statement"]
    done = structured.get("iterations_done", 0)
    items = structured.get("vars", {}).get(stmt.get("list_var"))
    length = len(items) if isinstance(items, list) else 0
    return _enter_or_leave(structured, done < length, f"{done} of {length} items handled")


def judge_condition(text: str) -> bool:
    """Decide a resolved natural-language condition.

    Handles comparison phrasings, ranges, containment, and equality; raises
    :class:`NoRule` on anything it cannot judge.
    """
    text = text.strip().rstrip(":")

    def num(s: str) -> Decimal:
        return parse_number(s.strip().strip('"'))

    m = re.match(r"^(.+?)\s+is\s+greater\s+than\s+(.+)$", text, re.IGNORECASE)
    if m:
        return num(m.group(1)) > num(m.group(2))
    m = re.match(r"^(.+?)\s+is\s+less\s+than\s+(.+)$", text, re.IGNORECASE)
    if m:
        return num(m.group(1)) < num(m.group(2))
    m = re.match(r"^(.+?)\s+is\s+between\s+(.+?)\s+and\s+(.+)$", text, re.IGNORECASE)
    if m:
        return num(m.group(2)) <= num(m.group(1)) <= num(m.group(3))
    m = re.match(r'^(.+?)\s+contains\s+"(.+)"$', text, re.IGNORECASE | re.DOTALL)
    if m:
        return m.group(2) in m.group(1)
    for op, fn in (
        (">=", lambda a, b: num(a) >= num(b)),
        ("<=", lambda a, b: num(a) <= num(b)),
        ("==", lambda a, b: _eq(a, b)),
        ("!=", lambda a, b: not _eq(a, b)),
        (">", lambda a, b: num(a) > num(b)),
        ("<", lambda a, b: num(a) < num(b)),
    ):
        if op in text:
            left, right = text.split(op, 1)
            return fn(left, right)
    m = re.match(r'^(.+?)\s+is\s+"(.*)"$', text, re.IGNORECASE | re.DOTALL)
    if m:
        return m.group(1).strip() == m.group(2)
    m = re.match(r"^(.+?)\s+is\s+(.+)$", text, re.IGNORECASE)
    if m:
        return _eq(m.group(1), m.group(2))
    raise NoRule(f"cannot judge condition {text!r}")


def _eq(a: str, b: str) -> bool:
    a, b = a.strip().strip('"'), b.strip().strip('"')
    try:
        return parse_number(a) == parse_number(b)
    except Exception:
        return a == b


def _h_condition_loop(rule, match, structured):
    condition = structured.get("condition") or ""
    truth = judge_condition(condition)
    return _enter_or_leave(structured, truth, f"condition is {'true' if truth else 'false'}")


def _h_condition_branch(rule, match, structured):
    condition = structured.get("condition") or ""
    truth = judge_condition(condition)
    menu = _menu(structured)
    if truth:
        entry = _pick(menu, "TakeBranch")
        if entry is None:
            raise NoRule("branch header offers no TakeBranch")
        return _move_from(entry, "condition holds")
    others = [e for e in menu if e["edge"] != "TakeBranch"]
    if not others:
        raise NoRule("branch header offers no skip")
    return _move_from(others[0], "condition fails")


_PC_HANDLERS = {
    "advance": _h_pc_advance,
    "loop_count": _h_loop_count,
    "loop_list": _h_loop_list,
    "condition_loop": _h_condition_loop,
    "condition_branch": _h_condition_branch,
}


# --------------------------------------------------------------------------
# Belief handlers
# --------------------------------------------------------------------------


def _h_app_session(rule, structured) -> list[Proposal]:
    obs = structured["observation"]
    if obs.foreground == "Home":
        return []
    app = obs.foreground
    return [
        Proposal(
            subject=f"{app} session",
            claim=f"the {app} app is in the foreground and responsive",
            supersedes="sessions",
        )
    ]


def _h_form_open(rule, structured) -> list[Proposal]:
    obs = structured["observation"]
    commands = structured.get("commands", [])
    opened = None
    for cmd in commands:
        if cmd.name == "click" and cmd.args and cmd.args[0] in _FORM_OPENERS:
            opened = _FORM_OPENERS[cmd.args[0]]
    if opened is None or obs.view != opened[0] or obs.foreground == "Home":
        return []
    view, label = opened
    return [
        Proposal(
            subject=f"{obs.foreground} session",
            claim=f"a blank {label} ({view}) is open",
            supersedes="fields",
        )
    ]


def _h_field_filled(rule, structured) -> list[Proposal]:
    obs = structured["observation"]
    if obs.foreground == "Home":
        return []
    visible_fields = {el.element_id for el in obs.elements if el.kind == "field"}
    proposals = []
    for cmd in structured.get("commands", []):
        if cmd.name != "input" or cmd.args[0] in rule.get("exclude", ["note_body"]):
            continue
        field_id, text = cmd.args[0], cmd.args[1]
        if field_id not in visible_fields:
            continue  # the form already closed; nothing left to track
        proposals.append(
            Proposal(
                subject=f"{obs.foreground} session",
                claim=f'the field {field_id} shows "{text}"',
                supersedes=f"field:{field_id}",
            )
        )
    return proposals


_PROPOSE_HANDLERS = {
    "app_session": _h_app_session,
    "form_open": _h_form_open,
    "field_filled": _h_field_filled,
}

_CLAIM_SESSION = re.compile(r"^the (\w+) app is in the foreground")
_CLAIM_FORM = re.compile(r"^a blank .+ \((\w+)\) is open$")
_CLAIM_FIELD = re.compile(r'^the field (\S+) shows "(.*)"$', re.DOTALL)


def _h_check_session_claims(rule, hyp, structured) -> str | None:
    obs = structured["observation"]
    last = structured.get("last_command")
    deliberate = last is not None and last.name in _NAVIGATION_COMMANDS

    m = _CLAIM_SESSION.match(hyp.claim)
    if m:
        app = m.group(1)
        if obs.dialog is not None:
            return VERDICT_CONTRADICTED
        if obs.foreground == app:
            return VERDICT_CONSISTENT
        return VERDICT_SUPERSEDED if deliberate else VERDICT_CONTRADICTED

    m = _CLAIM_FORM.match(hyp.claim)
    if m:
        view = m.group(1)
        app = hyp.subject.split(" session")[0]
        if obs.dialog is not None:
            return VERDICT_CONTRADICTED
        if obs.foreground == app and obs.view == view:
            return VERDICT_CONSISTENT
        return VERDICT_SUPERSEDED if deliberate else VERDICT_CONTRADICTED

    m = _CLAIM_FIELD.match(hyp.claim)
    if m:
        field_id, expected = m.group(1), m.group(2)
        element = next((el for el in obs.elements if el.element_id == field_id and el.kind == "field"), None)
        if element is None or obs.dialog is not None:
            # The form is not in front of us; the session claim arbitrates.
            return VERDICT_SUPERSEDED if deliberate else VERDICT_UNOBSERVABLE
        return VERDICT_CONSISTENT if element.text == expected else VERDICT_CONTRADICTED

    return None


def _h_check_unobservable(rule, hyp, structured) -> str:
    return VERDICT_UNOBSERVABLE


_CHECK_HANDLERS = {
    "session_claims": _h_check_session_claims,
    "unobservable": _h_check_unobservable,
}


def _h_realign_session(rule, structured) -> ActionScript:
    obs = structured["observation"]
    if obs.dialog is not None:
        return _script(
            [Command("click", ("dialog-dismiss",)), Command("back", ())],
            "dismiss the blocking dialog and settle back on a known view",
        )
    commands: list[Command] = []
    invalidated = structured.get("invalidated", [])
    app = None
    for hyp in invalidated:
        m = _CLAIM_SESSION.match(hyp.claim)
        if m:
            app = m.group(1)
            break
    if app is None and invalidated:
        app = invalidated[0].subject.split(" session")[0]
    if app is not None:
        commands.append(Command("start_app", (app,)))
    for hyp in invalidated:
        m = _CLAIM_FORM.match(hyp.claim)
        if m and m.group(1) in _FORM_REOPEN:
            commands.append(Command("click", (_FORM_REOPEN[m.group(1)],)))
    for hyp in invalidated:
        m = _CLAIM_FIELD.match(hyp.claim)
        if m:
            commands.append(Command("input", (m.group(1), m.group(2))))
    if not commands:
        raise NoRule("nothing to realign")
    return _script(commands, "restore the session the gap invalidated")


_RECOVER_HANDLERS = {
    "realign_session": _h_realign_session,
}
