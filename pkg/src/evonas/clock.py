"""Monotonic clock abstraction so expiry logic is testable without sleeps."""

from __future__ import annotations

import time


class SystemClock:
    def monotonic(self) -> float:
        return time.monotonic()


class FakeClock:
    """Manually advanced clock for liveness/expiry tests."""

    def __init__(self, start: float = 0.0):
        self._now = start

    def monotonic(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("cannot advance a monotonic clock backwards")
        self._now += seconds
