"""Atomic device commands and action scripts.

A grounded instruction becomes an :class:`ActionScript`: an ordered list of
commands drawn from a closed vocabulary.  Device-facing commands drive the
simulator; ``read_screen``/``assign`` write into the episode's variable
store; ``answer`` and ``done`` talk to the user / end the episode.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

DEVICE_COMMANDS = frozenset(
    {"start_app", "click", "long_click", "input", "swipe", "back", "home", "wait"}
)
RUNTIME_COMMANDS = frozenset({"read_screen", "assign", "answer", "done"})
ALL_COMMANDS = DEVICE_COMMANDS | RUNTIME_COMMANDS

_ARITY = {
    "start_app": 1, "click": 1, "long_click": 1, "input": 2, "swipe": 1,
    "back": 0, "home": 0, "wait": 1, "read_screen": 1, "assign": 2,
    "answer": 1, "done": 1,
}


class MalformedScript(ValueError):
    """An action script violates the vocabulary or its ordering rules."""


@dataclass(frozen=True)
class Command:
    name: str
    args: tuple = ()

    def render(self) -> str:
        inner = ", ".join(_render_arg(a) for a in self.args)
        return f"{self.name}({inner})"

    @property
    def is_device(self) -> bool:
        return self.name in DEVICE_COMMANDS


def _render_arg(arg) -> str:
    text = str(arg)
    if re.fullmatch(r"-?\d+(\.\d+)?", text):
        return text
    escaped = text.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


@dataclass
class ActionScript:
    commands: list[Command]
    rationale: str = ""

    def render(self) -> str:
        return "; ".join(c.render() for c in self.commands)

    def validate(self) -> None:
        if not self.commands:
            raise MalformedScript("empty action script")
        for i, cmd in enumerate(self.commands):
            if cmd.name not in ALL_COMMANDS:
                raise MalformedScript(f"unknown command {cmd.name!r}")
            if len(cmd.args) != _ARITY[cmd.name]:
                raise MalformedScript(
                    f"{cmd.name} takes {_ARITY[cmd.name]} argument(s), got {len(cmd.args)}"
                )
            if cmd.name == "done" and i != len(self.commands) - 1:
                raise MalformedScript("done() must be the last command")
        if sum(1 for c in self.commands if c.name == "done") > 1:
            raise MalformedScript("at most one done() per script")


_CMD_TEXT = re.compile(r"^(?P<name>\w+)\((?P<args>.*)\)$", re.DOTALL)


def parse_command(text: str) -> Command:
    """Parse one ``name(arg, ...)`` command rendering back into a Command."""
    m = _CMD_TEXT.match(text.strip())
    if not m:
        raise MalformedScript(f"not a command: {text!r}")
    name = m.group("name")
    raw = m.group("args").strip()
    args: list[str] = []
    if raw:
        args = _split_args(raw)
    return Command(name=name, args=tuple(args))


def _split_args(raw: str) -> list[str]:
    args = []
    buf = []
    in_quote = False
    escaped = False
    for ch in raw:
        if escaped:
            buf.append(ch)
            escaped = False
        elif ch == "\\" and in_quote:
            escaped = True
        elif ch == '"':
            in_quote = not in_quote
        elif ch == "," and not in_quote:
            args.append("".join(buf).strip())
            buf = []
        else:
            buf.append(ch)
    args.append("".join(buf).strip())
    return [a.strip() for a in args]


def parse_script(rendered: str, rationale: str = "") -> ActionScript:
    """Inverse of :meth:`ActionScript.render` (semicolon-joined commands)."""
    parts = [p for p in (s.strip() for s in rendered.split(";")) if p]
    script = ActionScript(commands=[parse_command(p) for p in parts], rationale=rationale)
    script.validate()
    return script


@dataclass
class CommandResult:
    command: Command
    ok: bool
    detail: str = ""
    observation_digest: str = ""


@dataclass
class ExecutionReport:
    """What happened when a script ran: per-command results, final state."""

    results: list[CommandResult] = field(default_factory=list)
    completed: bool = False
    belief_gap: bool = False
    failure: str = ""
    answer: str | None = None
    done_status: str | None = None
    var_writes: list[tuple[str, str]] = field(default_factory=list)  # (path, canonical)

    @property
    def ok(self) -> bool:
        return self.completed and not self.failure

    def note(self) -> str:
        if self.ok:
            return "ok"
        if self.belief_gap:
            return f"belief gap: {self.failure}" if self.failure else "belief gap"
        return self.failure or "failed"
