"""Belief state tests: propose/merge, verify verdicts, align cascades."""

import random

from taskprog.belief import (
    VERDICT_CONSISTENT,
    VERDICT_CONTRADICTED,
    VERDICT_SUPERSEDED,
    VERDICT_UNOBSERVABLE,
    BeliefState,
    HypothesisStatus,
    Proposal,
)


def filled_form_beliefs():
    beliefs = BeliefState()
    beliefs.apply_proposals(
        [
            Proposal("Contacts session", "the Contacts app is in the foreground and responsive"),
            Proposal("Contacts session", "a blank contact form (contact_form) is open"),
            Proposal("Contacts session", 'the field contact_name shows "John Doe"'),
            Proposal("Device clipboard", "the clipboard holds the meeting address"),
        ],
        node_id=4,
    )
    return beliefs


class TestPropose:
    def test_form_fill_hypotheses(self):
        beliefs = filled_form_beliefs()
        assert len(beliefs.active()) == 4
        assert all(h.established_at == 4 for h in beliefs.active())

    def test_wait_adds_nothing(self):
        beliefs = filled_form_beliefs()
        beliefs.apply_proposals([], node_id=9)
        assert len(beliefs.active()) == 4

    def test_duplicate_proposals_merge_keeping_earlier(self):
        beliefs = filled_form_beliefs()
        beliefs.apply_proposals(
            [Proposal("Contacts session", "a blank contact form (contact_form) is open")],
            node_id=9,
        )
        matching = [h for h in beliefs.active() if "blank contact form" in h.claim]
        assert len(matching) == 1
        assert matching[0].established_at == 4

    def test_supersede_subject_retires_other_claims(self):
        beliefs = filled_form_beliefs()
        beliefs.apply_proposals(
            [Proposal("Contacts session", "back on the contact list", supersedes="subject")],
            node_id=10,
        )
        active = beliefs.active()
        assert [h.claim for h in active if h.subject == "Contacts session"] == [
            "back on the contact list"
        ]
        # retirement is Confirmed, not Invalidated
        retired = [h for h in beliefs.hypotheses if h.status == HypothesisStatus.CONFIRMED]
        assert len(retired) == 3

    def test_supersede_sessions_keeps_non_session_subjects(self):
        beliefs = filled_form_beliefs()
        beliefs.apply_proposals(
            [Proposal("Messages session", "the Messages app is in the foreground",
                      supersedes="sessions")],
            node_id=11,
        )
        subjects = {h.subject for h in beliefs.active()}
        assert subjects == {"Messages session", "Device clipboard"}

    def test_supersede_single_field(self):
        beliefs = filled_form_beliefs()
        beliefs.apply_proposals(
            [Proposal("Contacts session", 'the field contact_name shows "Jane"',
                      supersedes="field:contact_name")],
            node_id=12,
        )
        names = [h.claim for h in beliefs.active() if "contact_name" in h.claim]
        assert names == ['the field contact_name shows "Jane"']


class TestVerify:
    def test_contradiction_collected(self):
        beliefs = filled_form_beliefs()
        form_claim = next(h for h in beliefs.active() if "form" in h.claim)
        contradictions = beliefs.apply_verdicts(
            {form_claim.id: VERDICT_CONTRADICTED}, node_id=7, evidence="screen: Home"
        )
        assert [c.hypothesis_id for c in contradictions] == [form_claim.id]

    def test_unobservable_stays_active_with_fresh_check_mark(self):
        beliefs = filled_form_beliefs()
        clipboard = next(h for h in beliefs.active() if h.subject == "Device clipboard")
        beliefs.apply_verdicts({clipboard.id: VERDICT_UNOBSERVABLE}, node_id=8, evidence="any")
        assert clipboard.status == HypothesisStatus.ACTIVE
        assert clipboard.last_checked == 8

    def test_all_active_get_checked(self):
        beliefs = filled_form_beliefs()
        beliefs.apply_verdicts({}, node_id=9, evidence="any")
        assert all(h.last_checked == 9 for h in beliefs.active())

    def test_superseded_retires(self):
        beliefs = filled_form_beliefs()
        session = next(h for h in beliefs.active() if "foreground" in h.claim)
        beliefs.apply_verdicts({session.id: VERDICT_SUPERSEDED}, node_id=9, evidence="any")
        assert session.status == HypothesisStatus.CONFIRMED

    def test_empty_hypothesis_set(self):
        beliefs = BeliefState()
        assert beliefs.apply_verdicts({}, node_id=1, evidence="x") == []


class TestAlign:
    def test_home_screen_cascade(self):
        beliefs = filled_form_beliefs()
        session = next(h for h in beliefs.active() if "foreground" in h.claim)
        contradictions = beliefs.apply_verdicts(
            {session.id: VERDICT_CONTRADICTED}, node_id=9, evidence="screen: Home"
        )
        needed = beliefs.align(contradictions)
        assert needed
        contacts = [h for h in beliefs.hypotheses if h.subject == "Contacts session"]
        assert all(h.status == HypothesisStatus.INVALIDATED for h in contacts)
        assert beliefs.gap is not None
        assert "context lost" in beliefs.gap["note"]

    def test_unrelated_subject_survives(self):
        beliefs = filled_form_beliefs()
        session = next(h for h in beliefs.active() if "foreground" in h.claim)
        contradictions = beliefs.apply_verdicts(
            {session.id: VERDICT_CONTRADICTED}, node_id=9, evidence="screen: Home"
        )
        beliefs.align(contradictions)
        clipboard = next(h for h in beliefs.hypotheses if h.subject == "Device clipboard")
        assert clipboard.status == HypothesisStatus.ACTIVE

    def test_no_contradictions_changes_nothing(self):
        beliefs = filled_form_beliefs()
        assert beliefs.align([]) is False
        assert beliefs.gap is None
        assert len(beliefs.active()) == 4

    def test_serialized_form_lists_active_plus_gap(self):
        beliefs = filled_form_beliefs()
        session = next(h for h in beliefs.active() if "foreground" in h.claim)
        beliefs.align(
            beliefs.apply_verdicts({session.id: VERDICT_CONTRADICTED}, 9, "screen: Home")
        )
        lines = beliefs.serialize_lines()
        assert any(line.startswith("!") for line in lines)
        assert all("Invalidated" not in line for line in lines if not line.startswith("!"))


class TestMonotoneInvalidation:
    def test_random_transitions_never_resurrect(self):
        rng = random.Random(13)
        beliefs = BeliefState()
        ever_invalidated = set()
        for step_index in range(300):
            roll = rng.random()
            if roll < 0.4:
                beliefs.apply_proposals(
                    [Proposal(f"subject {rng.randrange(5)}", f"claim {rng.randrange(20)}")],
                    node_id=step_index,
                )
            elif roll < 0.8 and beliefs.active():
                target = rng.choice(beliefs.active())
                verdict = rng.choice(
                    [VERDICT_CONSISTENT, VERDICT_CONTRADICTED, VERDICT_UNOBSERVABLE]
                )
                contradictions = beliefs.apply_verdicts(
                    {target.id: verdict}, node_id=step_index, evidence="e"
                )
                beliefs.align(contradictions)
                beliefs.clear_gap()
            for h in beliefs.hypotheses:
                if h.status == HypothesisStatus.INVALIDATED:
                    ever_invalidated.add(h.id)
            for h in beliefs.hypotheses:
                if h.id in ever_invalidated:
                    assert h.status == HypothesisStatus.INVALIDATED
