"""Deterministic simulated mobile device.

Five mock apps (notes, contacts, calendar, messages, expenses) with
screen-based partial observability: scrollable lists expose a five-item
window, the clipboard is never observable, and modal dialogs intercept every
action except their own buttons.  All transitions are pure functions of the
prior state and the command stream, so a (scenario, seed, commands) triple
always replays byte-identically.
"""

from __future__ import annotations

import datetime
import hashlib
from dataclasses import dataclass, field
from decimal import Decimal

from .actions import Command

LIST_WINDOW = 5

PERTURBATION_KINDS = ("CrashToHome", "PopupDialog", "StaleToast")


class DeviceError(RuntimeError):
    pass


class TargetNotFound(DeviceError):
    """A selector matched no visible element."""


class IllegalAction(DeviceError):
    """The command is not applicable in the current screen state."""


class EnvironmentFault(DeviceError):
    """The simulator itself is in a broken state."""


@dataclass(frozen=True)
class Element:
    element_id: str
    kind: str  # button | text | field | list-item | checkbox
    text: str
    enabled: bool = True


@dataclass
class Observation:
    """What the agent can see right now.

    Only the visible window of scrollable lists is present; hidden device
    state (clipboard, off-window items) never appears here.
    """

    foreground: str
    view: str
    elements: list[Element]
    scroll: dict | None = None  # {"offset": int, "window": int, "total": int}
    dialog: list[Element] | None = None
    toast: str | None = None

    def render(self) -> str:
        lines = [f"screen: {self.foreground} / {self.view}"]
        if self.scroll is not None:
            first = self.scroll["offset"] + 1 if self.scroll["total"] else 0
            last = min(self.scroll["offset"] + self.scroll["window"], self.scroll["total"])
            lines.append(f"scroll: items {first}-{last} of {self.scroll['total']}")
        for el in self.elements:
            flag = "" if el.enabled else " (disabled)"
            lines.append(f"- [{el.kind}] {el.element_id}: {el.text!r}{flag}")
        if self.dialog is not None:
            lines.append("dialog:")
            for el in self.dialog:
                lines.append(f"  - [{el.kind}] {el.element_id}: {el.text!r}")
        if self.toast is not None:
            lines.append(f"toast: {self.toast!r}")
        return "\n".join(lines)

    def find(self, selector: str) -> Element | None:
        pool = self.dialog if self.dialog is not None else self.elements
        for el in pool:
            if el.element_id == selector or el.text == selector:
                return el
        return None

    def visible_item_texts(self) -> list[str]:
        return [el.text for el in self.elements if el.kind == "list-item"]


def _item_id(app: str, text: str) -> str:
    digest = hashlib.sha1(f"{app}|{text}".encode("utf-8")).hexdigest()[:8]
    return f"item-{digest}"


def _weekday_name(date_text: str) -> str:
    return datetime.date.fromisoformat(date_text).strftime("%A")


APP_ALIASES = {
    "Markor": "Markor", "Notes": "Markor",
    "Contacts": "Contacts", "Calendar": "Calendar",
    "Messages": "Messages", "Expenses": "Expenses",
}

APP_NAMES = ("Markor", "Contacts", "Calendar", "Messages", "Expenses")

DEVICE_PROFILE = (
    "apps: Markor (notes, alias Notes), Contacts, Calendar, Messages, Expenses; "
    f"scrollable lists show {LIST_WINDOW} items per screen"
)


@dataclass
class _ViewFrame:
    name: str
    args: dict = field(default_factory=dict)
    offset: int = 0  # scroll offset for list views
    form: dict = field(default_factory=dict)  # transient field buffers


class Device:
    """The simulated phone: app data, per-app view stacks, hidden state."""

    def __init__(
        self,
        date: str = "2025-10-14",
        notes: dict[str, str] | None = None,
        contacts: list[dict] | None = None,
        calendar: list[dict] | None = None,
        expenses: list[dict] | None = None,
        threads: list[dict] | None = None,
        perturbations: list[dict] | None = None,
    ):
        self.date = date
        self.clock_minutes = 9 * 60  # 09:00, advanced only by wait()
        self.notes: dict[str, str] = dict(notes or {})
        self.contacts: list[dict] = [dict(c) for c in (contacts or [])]
        self.calendar: list[dict] = [dict(e) for e in (calendar or [])]
        self.expenses: list[dict] = [dict(e) for e in (expenses or [])]
        self.threads: list[dict] = [
            {"contact": t["contact"], "messages": [dict(m) for m in t.get("messages", [])]}
            for t in (threads or [])
        ]
        self.clipboard: str | None = None  # hidden state, never observed
        self.dialog: list[Element] | None = None
        self.toast: str | None = None
        self.foreground = "Home"
        self.stacks: dict[str, list[_ViewFrame]] = {}
        self.command_count = 0
        self._pending = sorted(
            (dict(p) for p in (perturbations or [])),
            key=lambda p: (p["after_command"], p["kind"]),
        )

    # -- perturbations ------------------------------------------------------

    def inject_perturbation(self, kind: str, after_command: int) -> None:
        if kind not in PERTURBATION_KINDS:
            raise EnvironmentFault(f"unknown perturbation kind {kind!r}")
        if after_command < self.command_count:
            raise EnvironmentFault("cannot schedule a perturbation in the past")
        self._pending.append({"kind": kind, "after_command": after_command})
        self._pending.sort(key=lambda p: (p["after_command"], p["kind"]))

    def _fire_due(self) -> None:
        while self._pending and self._pending[0]["after_command"] <= self.command_count:
            event = self._pending.pop(0)
            kind = event["kind"]
            if kind == "CrashToHome":
                app = self.foreground
                if app != "Home":
                    self.stacks[app] = [self._root_frame(app)]
                self.foreground = "Home"
                self.dialog = None
            elif kind == "PopupDialog":
                self.dialog = [
                    Element("dialog-msg", "text", "System notice: storage space is running low"),
                    Element("dialog-dismiss", "button", "Dismiss"),
                ]
            elif kind == "StaleToast":
                self.toast = "Saved"

    # -- command entry point -------------------------------------------------

    def execute(self, command: Command) -> str:
        """Apply one device command; returns a short effect note.

        Raises :class:`TargetNotFound` or :class:`IllegalAction`; in either
        case the state is unchanged except for the consumed toast.
        """
        self.toast = None
        self._fire_due()
        detail = self._apply(command)
        self.command_count += 1
        return detail

    def _apply(self, command: Command) -> str:
        name, args = command.name, command.args
        if self.dialog is not None and name not in ("wait",):
            if name == "click":
                el = self._find_in(self.dialog, args[0])
                if el is not None:
                    return self._click_dialog(el)
            raise IllegalAction(f"a dialog is blocking {name}")
        if name == "start_app":
            return self._start_app(args[0])
        if name == "home":
            self.foreground = "Home"
            return "went home"
        if name == "wait":
            self.clock_minutes += int(Decimal(args[0]) // 60)
            return f"waited {args[0]}s"
        if name == "back":
            return self._back()
        if name == "swipe":
            return self._swipe(args[0])
        if name == "click":
            return self._click(args[0])
        if name == "long_click":
            return self._long_click(args[0])
        if name == "input":
            return self._input(args[0], args[1])
        raise IllegalAction(f"command {name!r} is not a device command")

    # -- observation ----------------------------------------------------------

    def observe(self) -> Observation:
        if self.foreground == "Home":
            elements = [
                Element("clock", "text", f"{self.date} ({_weekday_name(self.date)})"),
            ] + [Element(f"app-{a.lower()}", "button", a) for a in APP_NAMES]
            return Observation("Home", "home", elements, dialog=self.dialog, toast=self.toast)
        frame = self._frame()
        elements, scroll = self._render_view(self.foreground, frame)
        return Observation(
            self.foreground, frame.name, elements, scroll=scroll,
            dialog=self.dialog, toast=self.toast,
        )

    # -- internals -------------------------------------------------------------

    def _root_frame(self, app: str) -> _ViewFrame:
        roots = {
            "Markor": "note_list", "Contacts": "contact_list",
            "Calendar": "event_list", "Messages": "thread_list",
            "Expenses": "expense_list",
        }
        return _ViewFrame(name=roots[app])

    def _frame(self) -> _ViewFrame:
        stack = self.stacks.setdefault(self.foreground, [self._root_frame(self.foreground)])
        return stack[-1]

    def _stack(self) -> list[_ViewFrame]:
        return self.stacks.setdefault(self.foreground, [self._root_frame(self.foreground)])

    def _start_app(self, name: str) -> str:
        canonical = APP_ALIASES.get(name)
        if canonical is None:
            raise TargetNotFound(f"no app named {name!r}")
        self.foreground = canonical
        self._stack()  # materialize the root view on first launch
        return f"opened {canonical}"

    def _back(self) -> str:
        if self.foreground == "Home":
            return "already home"
        stack = self._stack()
        if len(stack) > 1:
            stack.pop()
            return "went back"
        self.foreground = "Home"
        return "left the app"

    # Every list view: (items provider, windowed)
    def _list_items(self, app: str, view: str) -> list[str]:
        if app == "Markor" and view == "note_list":
            return sorted(self.notes.keys())
        if app == "Contacts" and view == "contact_list":
            return sorted(c["name"] for c in self.contacts)
        if app == "Calendar" and view == "event_list":
            ordered = sorted(self.calendar, key=lambda e: (e["date"], e["time"], e["title"]))
            return [_event_label(e) for e in ordered]
        if app == "Messages" and view == "thread_list":
            return sorted(t["contact"] for t in self.threads)
        if app == "Expenses" and view == "expense_list":
            return [_expense_label(e) for e in self.expenses]
        return []

    def _render_view(self, app: str, frame: _ViewFrame) -> tuple[list[Element], dict | None]:
        view = frame.name
        if view.endswith("_list"):
            items = self._list_items(app, view)
            total = len(items)
            max_offset = max(0, total - LIST_WINDOW)
            frame.offset = min(frame.offset, max_offset)
            window = items[frame.offset: frame.offset + LIST_WINDOW]
            elements = [Element(_item_id(app, t), "list-item", t) for t in window]
            elements += _LIST_CHROME[view]
            scroll = {"offset": frame.offset, "window": LIST_WINDOW, "total": total}
            return elements, scroll
        if app == "Markor" and view == "note_view":
            name = frame.args["name"]
            body = self.notes.get(name, "")
            elements = [Element("note_title", "text", name)]
            for i, line in enumerate([l for l in body.splitlines() if l.strip()], start=1):
                elements.append(Element(f"line-{i}", "text", line))
            elements.append(Element("note_body", "field", ""))
            return elements, None
        if app == "Markor" and view == "note_compose":
            return [
                Element("note_title", "field", frame.form.get("note_title", "")),
                Element("note_body", "field", frame.form.get("note_body", "")),
                Element("save_note", "button", "Save note"),
            ], None
        if app == "Contacts" and view == "contact_form":
            return [
                Element("contact_name", "field", frame.form.get("contact_name", "")),
                Element("contact_phone", "field", frame.form.get("contact_phone", "")),
                Element("contact_email", "field", frame.form.get("contact_email", "")),
                Element("save_contact", "button", "Save contact"),
            ], None
        if app == "Contacts" and view == "contact_view":
            contact = self._contact(frame.args["name"])
            return [
                Element("contact_name", "text", contact["name"]),
                Element("contact_phone", "text", contact.get("phone", "")),
                Element("contact_email", "text", contact.get("email", "")),
                Element("delete_contact", "button", "Delete contact"),
            ], None
        if app == "Calendar" and view == "event_form":
            return [
                Element("event_title", "field", frame.form.get("event_title", "")),
                Element("event_date", "field", frame.form.get("event_date", "")),
                Element("event_time", "field", frame.form.get("event_time", "")),
                Element("save_event", "button", "Save event"),
            ], None
        if app == "Calendar" and view == "event_view":
            label = frame.args["label"]
            return [
                Element("event_details", "text", label),
                Element("delete_event", "button", "Delete event"),
            ], None
        if app == "Messages" and view == "new_message":
            return [
                Element("recipient", "field", frame.form.get("recipient", "")),
                Element("message_input", "field", frame.form.get("message_input", "")),
                Element("send_message", "button", "Send"),
            ], None
        if app == "Messages" and view == "thread_view":
            thread = self._thread(frame.args["contact"])
            elements = [Element("thread_title", "text", thread["contact"])]
            for i, msg in enumerate(thread["messages"], start=1):
                prefix = ">" if msg["dir"] == "out" else "<"
                elements.append(Element(f"msg-{i}", "text", f"{prefix} {msg['text']}"))
            elements.append(Element("message_input", "field", frame.form.get("message_input", "")))
            elements.append(Element("send_message", "button", "Send"))
            return elements, None
        if app == "Expenses" and view == "expense_form":
            return [
                Element("expense_label", "field", frame.form.get("expense_label", "")),
                Element("expense_amount", "field", frame.form.get("expense_amount", "")),
                Element("expense_date", "field", frame.form.get("expense_date", "")),
                Element("save_expense", "button", "Save expense"),
            ], None
        if app == "Expenses" and view == "expense_view":
            label = frame.args["label"]
            return [
                Element("expense_details", "text", label),
                Element("delete_expense", "button", "Delete expense"),
            ], None
        raise EnvironmentFault(f"unrenderable view {app}/{view}")

    # -- interactions ------------------------------------------------------------

    def _find_in(self, pool: list[Element], selector: str) -> Element | None:
        for el in pool:
            if el.element_id == selector or el.text == selector:
                return el
        return None

    def _click_dialog(self, el: Element) -> str:
        if el.kind != "button":
            raise IllegalAction("only dialog buttons are clickable while it is open")
        self.dialog = None
        return "dismissed the dialog"

    def _visible(self) -> list[Element]:
        return self.observe().elements

    def _click(self, selector: str) -> str:
        if self.foreground == "Home":
            el = self._find_in(self.observe().elements, selector)
            if el is None:
                raise TargetNotFound(f"nothing on the home screen matches {selector!r}")
            if el.kind == "button":
                return self._start_app(el.text)
            raise IllegalAction(f"{selector!r} is not interactive")
        frame = self._frame()
        el = self._find_in(self._visible(), selector)
        if el is None:
            raise TargetNotFound(f"nothing visible matches {selector!r}")
        if el.kind == "list-item":
            return self._open_item(frame, el.text)
        if el.kind == "button":
            return self._press(frame, el.element_id)
        if el.kind == "field":
            return f"focused {el.element_id}"
        raise IllegalAction(f"{selector!r} is not interactive")

    def _long_click(self, selector: str) -> str:
        el = self._find_in(self._visible(), selector)
        if el is None:
            raise TargetNotFound(f"nothing visible matches {selector!r}")
        self.clipboard = el.text
        return "copied to clipboard"

    def _swipe(self, direction: str) -> str:
        if direction not in ("up", "down"):
            raise IllegalAction(f"cannot swipe {direction!r}")
        if self.foreground == "Home":
            return "nothing to scroll"
        frame = self._frame()
        if not frame.name.endswith("_list"):
            return "nothing to scroll"
        total = len(self._list_items(self.foreground, frame.name))
        max_offset = max(0, total - LIST_WINDOW)
        if direction == "down":
            frame.offset = min(frame.offset + LIST_WINDOW, max_offset)
        else:
            frame.offset = max(frame.offset - LIST_WINDOW, 0)
        return f"scrolled {direction}"

    def _input(self, selector: str, text: str) -> str:
        if self.foreground == "Home":
            raise IllegalAction("no input field on the home screen")
        frame = self._frame()
        el = self._find_in(self._visible(), selector)
        if el is None:
            raise TargetNotFound(f"no field matches {selector!r}")
        if el.kind != "field":
            raise IllegalAction(f"{selector!r} is not an input field")
        if self.foreground == "Markor" and frame.name == "note_view" and el.element_id == "note_body":
            # Appending to an open note persists immediately.
            name = frame.args["name"]
            body = self.notes.get(name, "")
            self.notes[name] = (body + "\n" if body else "") + text
            return f"appended a line to {name}"
        frame.form[el.element_id] = text
        return f"typed into {el.element_id}"

    def _open_item(self, frame: _ViewFrame, label: str) -> str:
        app, view = self.foreground, frame.name
        stack = self._stack()
        if app == "Markor" and view == "note_list":
            stack.append(_ViewFrame("note_view", {"name": label}))
            return f"opened note {label}"
        if app == "Contacts" and view == "contact_list":
            stack.append(_ViewFrame("contact_view", {"name": label}))
            return f"opened contact {label}"
        if app == "Calendar" and view == "event_list":
            stack.append(_ViewFrame("event_view", {"label": label}))
            return f"opened event {label}"
        if app == "Messages" and view == "thread_list":
            stack.append(_ViewFrame("thread_view", {"contact": label}))
            return f"opened thread {label}"
        if app == "Expenses" and view == "expense_list":
            stack.append(_ViewFrame("expense_view", {"label": label}))
            return f"opened expense {label}"
        raise IllegalAction(f"cannot open {label!r} here")

    def _press(self, frame: _ViewFrame, button_id: str) -> str:
        app = self.foreground
        stack = self._stack()
        if button_id == "new_note":
            stack.append(_ViewFrame("note_compose"))
            return "started a new note"
        if button_id == "save_note":
            name = frame.form.get("note_title", "").strip()
            if not name:
                raise IllegalAction("the note needs a title before saving")
            self.notes[name] = frame.form.get("note_body", "")
            stack.pop()
            return f"saved note {name}"
        if button_id == "add_contact":
            stack.append(_ViewFrame("contact_form"))
            return "opened a blank contact form"
        if button_id == "save_contact":
            name = frame.form.get("contact_name", "").strip()
            if not name:
                raise IllegalAction("the contact needs a name before saving")
            self.contacts.append(
                {
                    "name": name,
                    "phone": frame.form.get("contact_phone", ""),
                    "email": frame.form.get("contact_email", ""),
                }
            )
            stack.pop()
            return f"saved contact {name}"
        if button_id == "delete_contact":
            name = frame.args["name"]
            self.contacts = [c for c in self.contacts if c["name"] != name]
            stack.pop()
            return f"deleted contact {name}"
        if button_id == "add_event":
            stack.append(_ViewFrame("event_form"))
            return "opened a blank event form"
        if button_id == "save_event":
            title = frame.form.get("event_title", "").strip()
            if not title:
                raise IllegalAction("the event needs a title before saving")
            self.calendar.append(
                {
                    "title": title,
                    "date": frame.form.get("event_date", ""),
                    "time": frame.form.get("event_time", ""),
                }
            )
            stack.pop()
            return f"saved event {title}"
        if button_id == "delete_event":
            label = frame.args["label"]
            self.calendar = [e for e in self.calendar if _event_label(e) != label]
            stack.pop()
            return f"deleted event {label}"
        if button_id == "new_message":
            stack.append(_ViewFrame("new_message"))
            return "started a new message"
        if button_id == "send_message":
            return self._send_message(frame)
        if button_id == "add_expense":
            stack.append(_ViewFrame("expense_form"))
            return "opened a blank expense form"
        if button_id == "save_expense":
            label = frame.form.get("expense_label", "").strip()
            if not label:
                raise IllegalAction("the expense needs a label before saving")
            self.expenses.append(
                {
                    "label": label,
                    "amount": frame.form.get("expense_amount", ""),
                    "date": frame.form.get("expense_date", ""),
                }
            )
            stack.pop()
            return f"saved expense {label}"
        if button_id == "delete_expense":
            label = frame.args["label"]
            self.expenses = [e for e in self.expenses if _expense_label(e) != label]
            stack.pop()
            return f"deleted expense {label}"
        raise IllegalAction(f"button {button_id!r} does nothing in {app}/{frame.name}")

    def _send_message(self, frame: _ViewFrame) -> str:
        text = frame.form.get("message_input", "").strip()
        if not text:
            raise IllegalAction("the message is empty")
        if frame.name == "new_message":
            recipient = frame.form.get("recipient", "").strip()
            if not recipient:
                raise IllegalAction("the message needs a recipient")
        else:
            recipient = frame.args["contact"]
        thread = self._thread_or_create(recipient)
        thread["messages"].append({"dir": "out", "text": text})
        frame.form["message_input"] = ""
        if frame.name == "new_message":
            self._stack().pop()
        return f"sent a message to {recipient}"

    # -- data lookups ---------------------------------------------------------

    def _contact(self, name: str) -> dict:
        for c in self.contacts:
            if c["name"] == name:
                return c
        raise EnvironmentFault(f"contact {name!r} vanished")

    def _thread(self, contact: str) -> dict:
        for t in self.threads:
            if t["contact"] == contact:
                return t
        raise EnvironmentFault(f"thread {contact!r} vanished")

    def _thread_or_create(self, contact: str) -> dict:
        for t in self.threads:
            if t["contact"] == contact:
                return t
        thread = {"contact": contact, "messages": []}
        self.threads.append(thread)
        return thread

    # -- snapshots --------------------------------------------------------------

    def snapshot(self) -> dict:
        """Full serializable state, used by determinism checks and evaluators."""
        return {
            "date": self.date,
            "clock_minutes": self.clock_minutes,
            "foreground": self.foreground,
            "notes": dict(sorted(self.notes.items())),
            "contacts": sorted(self.contacts, key=lambda c: c["name"]),
            "calendar": sorted(self.calendar, key=lambda e: (e["date"], e["time"], e["title"])),
            "expenses": list(self.expenses),
            "threads": sorted(
                ({"contact": t["contact"], "messages": t["messages"]} for t in self.threads),
                key=lambda t: t["contact"],
            ),
            "clipboard": self.clipboard,
            "dialog_open": self.dialog is not None,
        }


_LIST_CHROME = {
    "note_list": [Element("new_note", "button", "New note")],
    "contact_list": [Element("add_contact", "button", "Add contact")],
    "event_list": [Element("add_event", "button", "Add event")],
    "thread_list": [Element("new_message", "button", "New message")],
    "expense_list": [Element("add_expense", "button", "Add expense")],
}


def _event_label(event: dict) -> str:
    return f"{event['title']} [{event['date']} {event['time']}]"


def _expense_label(expense: dict) -> str:
    return f"{expense['label']} - ${expense['amount']} [{expense['date']}]"
