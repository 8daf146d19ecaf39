"""Task scenarios: initial device data, instruction, evaluator, perturbations.

Scenarios are declared in JSON files (see ``data/scenario.schema.json``) and
loaded into a registry.  Each one builds a fresh :class:`Device` from
``(scenario, seed)`` deterministically and judges the final device state with
a pure evaluator that reports a per-subtask breakdown.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal
from importlib import resources

import jsonschema

from .device import Device, _event_label, _expense_label

CATEGORY_COMPOSITIONAL = "compositional"
CATEGORY_ITERATIVE = "iterative"


class UnknownScenario(KeyError):
    pass


@dataclass
class EvaluationResult:
    success: bool
    breakdown: list[tuple[str, bool]]

    @property
    def score(self) -> str:
        done = sum(1 for _, ok in self.breakdown if ok)
        return f"{done}/{len(self.breakdown)}"


@dataclass
class TaskScenario:
    id: str
    category: str
    n: int
    instruction: str
    device_spec: dict
    evaluator: dict
    perturbations: list[dict] = field(default_factory=list)

    def build_device(self, seed: int) -> Device:
        spec = _substitute_seed(self.device_spec, seed)
        return Device(
            date=spec.get("date", "2025-10-14"),
            notes=spec.get("notes"),
            contacts=spec.get("contacts"),
            calendar=spec.get("calendar"),
            expenses=spec.get("expenses"),
            threads=spec.get("threads"),
            perturbations=self.perturbations,
        )

    def evaluate(self, device: Device) -> EvaluationResult:
        breakdown = _evaluate(self.evaluator, self.device_spec, device)
        return EvaluationResult(success=all(ok for _, ok in breakdown), breakdown=breakdown)


def _substitute_seed(obj, seed: int):
    """Replace the %SEED% marker in scenario strings with the seed digits."""
    if isinstance(obj, str):
        return obj.replace("%SEED%", f"{seed % 100:02d}")
    if isinstance(obj, list):
        return [_substitute_seed(v, seed) for v in obj]
    if isinstance(obj, dict):
        return {k: _substitute_seed(v, seed) for k, v in obj.items()}
    return obj


# --------------------------------------------------------------------------
# Evaluators
# --------------------------------------------------------------------------


def _evaluate(spec: dict, device_spec: dict, device: Device) -> list[tuple[str, bool]]:
    kind = spec["kind"]
    params = spec.get("params", {})
    if kind == "all_of":
        out: list[tuple[str, bool]] = []
        for part in params["parts"]:
            out.extend(_evaluate(part, device_spec, device))
        return out
    if kind == "contact_exists":
        want = params
        ok = any(
            c["name"] == want["name"]
            and c.get("phone", "") == want.get("phone", c.get("phone", ""))
            and c.get("email", "") == want.get("email", c.get("email", ""))
            for c in device.contacts
        )
        return [(f"contact {want['name']} saved with the right details", ok)]
    if kind == "calendar_events":
        out = []
        for want in params["expected"]:
            matches = [
                e for e in device.calendar
                if e["title"] == want["title"] and e["date"] == want["date"]
                and e["time"] == want["time"]
            ]
            out.append((f"event {want['title']} on {want['date']} {want['time']}", len(matches) == 1))
        return out
    if kind == "expense_exists":
        want = params
        ok = any(
            e["label"] == want["label"] and e["amount"] == want["amount"]
            and e["date"] == want["date"]
            for e in device.expenses
        )
        return [(f"expense {want['label']} recorded", ok)]
    if kind == "expenses_empty":
        originals = device_spec.get("expenses", [])
        remaining = {_expense_label(e) for e in device.expenses}
        out = [
            (f"removed {_expense_label(e)}", _expense_label(e) not in remaining)
            for e in originals
        ]
        out.append(("no expense entries remain", len(device.expenses) == 0))
        return out
    if kind == "note_body":
        body = device.notes.get(params["note"])
        return [(f"note {params['note']} holds the expected body", body == params["body"])]
    if kind == "note_log_lines":
        body = device.notes.get(params["note"], "")
        lines = [l for l in body.splitlines() if l.strip()]
        want = params["lines"]
        ok = lines[-len(want):] == want if want else True
        return [(f"note {params['note']} ends with {len(want)} new lines", ok)] + [
            (f"line {text!r} present", text in lines) for text in want
        ]
    if kind == "thread_messages":
        thread = next((t for t in device.threads if t["contact"] == params["contact"]), None)
        sent = [m["text"] for m in thread["messages"] if m["dir"] == "out"] if thread else []
        out = []
        cursor = 0
        for text in params["messages"]:
            try:
                cursor = sent.index(text, cursor) + 1
                ok = True
            except ValueError:
                ok = False
            out.append((f"message to {params['contact']}: {text[:40]!r}", ok))
        return out
    if kind == "broadcast":
        out = []
        for name in params["contacts"]:
            thread = next((t for t in device.threads if t["contact"] == name), None)
            sent = [m["text"] for m in thread["messages"] if m["dir"] == "out"] if thread else []
            out.append((f"{name} received the broadcast", params["message"] in sent))
        return out
    if kind == "saturday_cleanup":
        labels = {_event_label(e) for e in device.calendar}
        out = [(f"deleted {label}", label not in labels) for label in params["deleted"]]
        out.append(("events in other weeks untouched", all(k in labels for k in params["kept"])))
        return out
    raise ValueError(f"unknown evaluator kind {kind!r}")


# --------------------------------------------------------------------------
# Registry and loading
# --------------------------------------------------------------------------

_SCHEMA = None


def scenario_schema() -> dict:
    global _SCHEMA
    if _SCHEMA is None:
        text = resources.files("taskprog.data").joinpath("scenario.schema.json").read_text("utf-8")
        _SCHEMA = json.loads(text)
    return _SCHEMA


def load_scenario_dict(data: dict) -> TaskScenario:
    jsonschema.validate(data, scenario_schema())
    return TaskScenario(
        id=data["id"],
        category=data["category"],
        n=data["n"],
        instruction=data["instruction"],
        device_spec=data.get("device", {}),
        evaluator=data["evaluator"],
        perturbations=data.get("perturbations", []),
    )


class ScenarioRegistry:
    def __init__(self):
        self._scenarios: dict[str, TaskScenario] = {}

    def register(self, scenario: TaskScenario) -> None:
        self._scenarios[scenario.id] = scenario

    def get(self, scenario_id: str) -> TaskScenario:
        try:
            return self._scenarios[scenario_id]
        except KeyError:
            raise UnknownScenario(scenario_id) from None

    def ids(self) -> list[str]:
        return sorted(self._scenarios)

    def all(self) -> list[TaskScenario]:
        return [self._scenarios[i] for i in self.ids()]


_default_registry: ScenarioRegistry | None = None


def default_registry() -> ScenarioRegistry:
    """The scenario suite shipped with the package."""
    global _default_registry
    if _default_registry is None:
        registry = ScenarioRegistry()
        data_dir = resources.files("taskprog.data").joinpath("scenarios")
        for entry in sorted(data_dir.iterdir(), key=lambda e: e.name):
            if entry.name.endswith(".json"):
                registry.register(load_scenario_dict(json.loads(entry.read_text("utf-8"))))
        _default_registry = registry
    return _default_registry


def reset(scenario: TaskScenario, seed: int):
    """Build the scenario's device and return (device, first observation)."""
    device = scenario.build_device(seed)
    return device, device.observe()
