"""Run clocks.

Mock runs must be byte-reproducible, including every timestamp in the
trace and the state snapshots. ``StepClock`` therefore derives each
timestamp as a pure function of (step, slot) instead of reading wall
time; re-executing or resuming a run regenerates identical timestamps.
Live runs use ``SystemClock``.
"""

from __future__ import annotations

import time
from datetime import datetime, timedelta, timezone
from typing import Protocol

# Commit order of the five per-step components; also the timestamp slot order.
COMPONENT_SLOTS = ("thought", "action_thought", "action_code", "observation", "state")

DEFAULT_EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)


class Clock(Protocol):
    def component_time(self, step: int, slot: str) -> str:
        """Timestamp for one committed step component (ISO-8601)."""
        ...


class StepClock:
    """Deterministic clock: epoch + step*5s + slot offset."""

    def __init__(self, epoch: datetime = DEFAULT_EPOCH) -> None:
        self.epoch = epoch

    def component_time(self, step: int, slot: str) -> str:
        offset = COMPONENT_SLOTS.index(slot)
        return (self.epoch + timedelta(seconds=step * 5 + offset)).isoformat()


class SystemClock:
    """Wall-clock timestamps for live runs (no reproducibility contract)."""

    def component_time(self, step: int, slot: str) -> str:
        return datetime.now(timezone.utc).isoformat()


def sleep_ms(ms: int) -> None:
    if ms > 0:
        time.sleep(ms / 1000.0)
