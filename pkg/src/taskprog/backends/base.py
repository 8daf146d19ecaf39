"""Decision-backend contract.

A backend answers six kinds of questions: write the task program, ground the
current instruction into an action script, choose the next program-counter
move, propose belief hypotheses, judge hypotheses against an observation, and
plan a recovery script after a belief-reality gap.

Every request splits into a static prefix (fixed instruction text per
purpose, byte-identical across calls) and a dynamic payload (the serialized
context).  Token accounting leans on that split, so the prefix must never
depend on episode state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from importlib import resources


class Purpose(str, Enum):
    GENERATE_PROGRAM = "GenerateProgram"
    GROUND_INSTRUCTION = "GroundInstruction"
    UPDATE_PC = "UpdatePC"
    PROPOSE_BELIEFS = "ProposeBeliefs"
    CHECK_BELIEFS = "CheckBeliefs"
    RECOVER = "Recover"


_PROMPT_FILES = {
    Purpose.GENERATE_PROGRAM: "generate_program.txt",
    Purpose.GROUND_INSTRUCTION: "ground_instruction.txt",
    Purpose.UPDATE_PC: "update_pc.txt",
    Purpose.PROPOSE_BELIEFS: "propose_beliefs.txt",
    Purpose.CHECK_BELIEFS: "check_beliefs.txt",
    Purpose.RECOVER: "recover.txt",
}

_prefix_cache: dict[Purpose, str] = {}


def static_prefix(purpose: Purpose) -> str:
    """The fixed instruction text for a purpose; loaded once, never varies."""
    if purpose not in _prefix_cache:
        name = _PROMPT_FILES[purpose]
        text = resources.files("taskprog.data.prompts").joinpath(name).read_text("utf-8")
        _prefix_cache[purpose] = text
    return _prefix_cache[purpose]


@dataclass
class BackendRequest:
    purpose: Purpose
    static_prefix: str
    dynamic_payload: str
    structured: dict = field(default_factory=dict)


@dataclass
class TokenUsage:
    prompt_tokens: int
    output_tokens: int


class BackendError(RuntimeError):
    pass


class NoRule(BackendError):
    """The scripted rule table has no rule for this request."""


class UnparseableProgram(BackendError):
    """Program generation kept returning text that does not parse."""


class MalformedMove(BackendError):
    """The backend returned a move outside the offered menu."""


def render_structured(structured: dict) -> str:
    """Stable text rendering of a request's structured inputs.

    This is both the user-message body an HTTP backend sends and the text the
    token ledger measures as the call's dynamic payload, so it must be a pure
    function of the inputs.
    """
    from ..values import canonical_json  # deferred; values never imports backends

    parts = []
    for key, value in sorted(structured.items()):
        if key == "observation":
            parts.append(f"[screen]\n{value.render()}")
        elif key == "menu":
            lines = [f"- {e['edge']} -> {e['target']}" for e in value]
            parts.append("[legal moves]\n" + "\n".join(lines))
        elif key == "hypotheses":
            lines = [f"- #{h.id} {h.subject}: {h.claim}" for h in value]
            parts.append("[active beliefs]\n" + "\n".join(lines))
        elif key == "invalidated":
            lines = [f"- #{h.id} {h.subject}: {h.claim}" for h in value]
            parts.append("[invalidated beliefs]\n" + "\n".join(lines))
        elif key == "commands":
            parts.append("[executed]\n" + "\n".join(c.render() for c in value))
        elif key == "last_command":
            parts.append(f"last_command: {value.render() if value else '-'}")
        elif key == "statement":
            parts.append(f"statement: {value.get('kind')} {value.get('step_id')}: {value.get('text')}")
        elif key == "vars":
            lines = [f"- {name} = {canonical_json(v)}" for name, v in sorted(value.items())]
            parts.append("[values]\n" + "\n".join(lines))
        elif key == "rejections":
            parts.append("[rejected moves]\n" + "\n".join(value))
        elif isinstance(value, (str, int, float)) or value is None:
            parts.append(f"{key}: {value}")
        else:
            parts.append(f"{key}: {value!r}")
    return "\n\n".join(parts)


class Backend:
    """Interface all backends implement.  Methods return (result, usage).

    ``usage`` may be None; the harness then falls back to its own token
    heuristic over the request and the rendered response.
    """

    name = "backend"

    def generate_program(self, request: BackendRequest):
        raise NotImplementedError

    def ground_instruction(self, request: BackendRequest):
        raise NotImplementedError

    def update_pc(self, request: BackendRequest):
        raise NotImplementedError

    def propose_beliefs(self, request: BackendRequest):
        raise NotImplementedError

    def check_beliefs(self, request: BackendRequest):
        raise NotImplementedError

    def recover(self, request: BackendRequest):
        raise NotImplementedError
