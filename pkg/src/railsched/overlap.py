"""Move-interval overlap policies shared by the planner and plan repair."""
from __future__ import annotations

import enum


class OverlapPolicy(enum.Enum):
    STRICT = "strict"
    NO_NESTED = "no-nested"
    OFF = "off"

    @classmethod
    def parse(cls, value) -> "OverlapPolicy":
        if isinstance(value, OverlapPolicy):
            return value
        value = str(value).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == value:
                return member
        raise ValueError(f"unknown overlap policy {value!r}")

    def admits(self, t1: int, t2: int, o1: int, o2: int) -> bool:
        """May a move over [t1, t2) share a destination with one over [o1, o2)?"""
        if self is OverlapPolicy.OFF:
            return True
        if t2 <= o1 or o2 <= t1:
            return True
        if self is OverlapPolicy.STRICT:
            return False
        # containment either way
        inside = o1 <= t1 and t2 <= o2
        around = t1 <= o1 and o2 <= t2
        return not (inside or around)

    def earliest_entry_after(self, prev_move_start: int, prev_enter: int, speed_den: int) -> int:
        """Lowest entry tick for a later visitor whose move must be admitted
        against an earlier visitor's interval [prev_move_start, prev_enter).

        Assumes the later visitor enters strictly after ``prev_enter`` and its
        move lasts exactly ``speed_den`` ticks.
        """
        if self is OverlapPolicy.STRICT:
            return prev_enter + speed_den
        if self is OverlapPolicy.NO_NESTED:
            return prev_move_start + 1 + speed_den
        return 0
