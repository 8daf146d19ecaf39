"""Global belief state: hypotheses about hidden or off-screen device state.

The runtime keeps an active set of hypotheses (structured free text), checks
them against every fresh observation, and on contradiction invalidates the
hypothesis plus everything else tied to the same subject, raising a gap flag
that switches the interpreter into its recovery routine.  Invalidation is
monotone: a hypothesis never returns to the active set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

VERDICT_CONSISTENT = "consistent"
VERDICT_CONTRADICTED = "contradicted"
VERDICT_UNOBSERVABLE = "unobservable"
# A claim that stopped holding because of the agent's own deliberate
# navigation retires quietly; only environment-caused refutations are gaps.
VERDICT_SUPERSEDED = "superseded"


class HypothesisStatus(str, Enum):
    ACTIVE = "Active"
    INVALIDATED = "Invalidated"
    CONFIRMED = "Confirmed"


@dataclass
class Hypothesis:
    id: int
    subject: str
    claim: str
    established_at: int  # node_id of the step that established it
    status: HypothesisStatus = HypothesisStatus.ACTIVE
    last_checked: int = -1

    def line(self) -> str:
        return f"{self.subject} - {self.claim} - {self.status.value}"


@dataclass
class Contradiction:
    hypothesis_id: int
    evidence: str  # digest of the refuting observation


@dataclass
class Proposal:
    subject: str
    claim: str
    supersedes: str | None = None  # None | "subject" | "field:<id>"


@dataclass
class BeliefState:
    hypotheses: list[Hypothesis] = field(default_factory=list)
    gap: dict | None = None  # {"hypothesis_ids": [...], "evidence": str, "note": str}
    recovery_note: str = ""
    _next_id: int = 1

    def active(self) -> list[Hypothesis]:
        return [h for h in self.hypotheses if h.status == HypothesisStatus.ACTIVE]

    def get(self, hypothesis_id: int) -> Hypothesis:
        for h in self.hypotheses:
            if h.id == hypothesis_id:
                return h
        raise KeyError(hypothesis_id)

    # -- predict -------------------------------------------------------------

    def apply_proposals(self, proposals: list[Proposal], node_id: int) -> None:
        """Merge new hypotheses; exact duplicates keep their original node.

        A proposal may supersede earlier same-subject hypotheses (fresh app
        entry, reopened form, re-typed field): those retire as Confirmed -
        they were true while they lasted - which is distinct from the
        contradiction path.
        """
        for prop in proposals:
            duplicate = next(
                (
                    h for h in self.hypotheses
                    if h.subject == prop.subject and h.claim == prop.claim
                    and h.status == HypothesisStatus.ACTIVE
                ),
                None,
            )
            if prop.supersedes:
                self._retire(prop.subject, prop.supersedes, keep=duplicate)
            if duplicate is not None:
                continue
            self.hypotheses.append(
                Hypothesis(
                    id=self._next_id,
                    subject=prop.subject,
                    claim=prop.claim,
                    established_at=node_id,
                )
            )
            self._next_id += 1

    def _retire(self, subject: str, scope: str, keep: Hypothesis | None) -> None:
        for h in self.active():
            if h is keep:
                continue
            if scope == "sessions":
                # A fresh session supersedes every *other* session subject.
                if h.subject != subject and h.subject.endswith(" session"):
                    h.status = HypothesisStatus.CONFIRMED
            elif scope == "subject":
                if h.subject == subject:
                    h.status = HypothesisStatus.CONFIRMED
            elif scope == "fields":
                if h.subject == subject and h.claim.startswith("the field "):
                    h.status = HypothesisStatus.CONFIRMED
            elif scope.startswith("field:"):
                field_id = scope.split(":", 1)[1]
                if h.subject == subject and f"field {field_id} " in h.claim:
                    h.status = HypothesisStatus.CONFIRMED

    # -- verify ----------------------------------------------------------------

    def apply_verdicts(self, verdicts: dict[int, str], node_id: int, evidence: str) -> list[Contradiction]:
        """Record one verify pass; returns the contradictions found.

        Consistent and unobservable hypotheses stay active with a fresh
        last-checked mark; contradicted ones are returned for alignment.
        """
        contradictions = []
        for h in self.active():
            verdict = verdicts.get(h.id, VERDICT_UNOBSERVABLE)
            h.last_checked = node_id
            if verdict == VERDICT_CONTRADICTED:
                contradictions.append(Contradiction(hypothesis_id=h.id, evidence=evidence))
            elif verdict == VERDICT_SUPERSEDED:
                h.status = HypothesisStatus.CONFIRMED
        return contradictions

    # -- align -------------------------------------------------------------------

    def align(self, contradictions: list[Contradiction], note: str = "") -> bool:
        """Invalidate contradicted hypotheses and their same-subject dependents.

        Returns True when recovery is needed (at least one invalidation).
        """
        if not contradictions:
            return False
        subjects = set()
        invalidated_ids = []
        for c in contradictions:
            h = self.get(c.hypothesis_id)
            subjects.add(h.subject)
        for h in self.active():
            if h.subject in subjects:
                h.status = HypothesisStatus.INVALIDATED
                invalidated_ids.append(h.id)
        gap_note = note or f"context lost: {', '.join(sorted(subjects))}"
        self.gap = {
            "hypothesis_ids": invalidated_ids,
            "evidence": contradictions[0].evidence,
            "note": gap_note,
        }
        self.recovery_note = gap_note
        return bool(invalidated_ids)

    def clear_gap(self) -> None:
        self.gap = None
        self.recovery_note = ""

    def invalidated(self) -> list[Hypothesis]:
        return [h for h in self.hypotheses if h.status == HypothesisStatus.INVALIDATED]

    # -- serialization ---------------------------------------------------------------

    def serialize_lines(self) -> list[str]:
        """Active hypotheses plus any standing gap note (never the retired ones)."""
        lines = [h.line() for h in self.active()]
        if self.gap is not None:
            lines.append(f"! belief-reality gap: {self.gap['note']}")
        return lines

    def snapshot(self) -> dict:
        return {
            "hypotheses": [
                {
                    "id": h.id,
                    "subject": h.subject,
                    "claim": h.claim,
                    "status": h.status.value,
                    "established_at": h.established_at,
                    "last_checked": h.last_checked,
                }
                for h in self.hypotheses
            ],
            "gap": self.gap,
        }
