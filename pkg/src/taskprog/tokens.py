"""Token accounting: a deterministic heuristic counter and the call ledger.

The counter approximates tokens as ceil(characters / 4) over
whitespace-normalized text; it is documented as an approximation and only
used when the backend reports no usage of its own.  The ledger splits every
backend call into static-prefix, dynamic, and output tokens so per-step and
per-episode totals stay exact integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


def count_tokens(text: str) -> int:
    """ceil(len/4) over text with whitespace runs collapsed; empty -> 0."""
    normalized = " ".join(text.split())
    if not normalized:
        return 0
    return math.ceil(len(normalized) / 4)


@dataclass
class LedgerEntry:
    step_index: int  # action-generation cycle the call belongs to (0 = setup)
    purpose: str
    static_prefix_tokens: int
    dynamic_tokens: int
    output_tokens: int


@dataclass
class TokenLedger:
    entries: list[LedgerEntry] = field(default_factory=list)

    def record(
        self,
        step_index: int,
        purpose: str,
        static_prefix_tokens: int,
        dynamic_tokens: int,
        output_tokens: int,
    ) -> LedgerEntry:
        entry = LedgerEntry(
            step_index=step_index,
            purpose=purpose,
            static_prefix_tokens=static_prefix_tokens,
            dynamic_tokens=dynamic_tokens,
            output_tokens=output_tokens,
        )
        self.entries.append(entry)
        return entry

    def totals(self) -> dict:
        return {
            "static_prefix_tokens": sum(e.static_prefix_tokens for e in self.entries),
            "dynamic_tokens": sum(e.dynamic_tokens for e in self.entries),
            "output_tokens": sum(e.output_tokens for e in self.entries),
            "calls": len(self.entries),
        }

    def per_step(self) -> dict[int, dict]:
        steps: dict[int, dict] = {}
        for e in self.entries:
            agg = steps.setdefault(
                e.step_index,
                {"static_prefix_tokens": 0, "dynamic_tokens": 0, "output_tokens": 0, "calls": 0},
            )
            agg["static_prefix_tokens"] += e.static_prefix_tokens
            agg["dynamic_tokens"] += e.dynamic_tokens
            agg["output_tokens"] += e.output_tokens
            agg["calls"] += 1
        return steps

    def dynamic_series(self, purpose: str) -> list[tuple[int, int]]:
        """(step_index, dynamic_tokens) for each call of one purpose, in order."""
        return [
            (e.step_index, e.dynamic_tokens)
            for e in self.entries
            if e.purpose == purpose
        ]
