"""Time sources injected into the harness and the built-in backends.

All clocks report milliseconds. ``SimulatedClock`` keeps time as an exact
``Fraction`` so that ``t1 - t0`` after ``advance(x)`` is exactly ``x``;
replayed latencies therefore come back bit-identical.
"""

from __future__ import annotations

import threading
import time
from fractions import Fraction
from numbers import Real
from typing import Protocol


class Clock(Protocol):
    def now(self) -> Real: ...

    def advance(self, ms: float) -> None:
        """Let ``ms`` milliseconds pass (simulated backends call this)."""

    def fork(self) -> "Clock":
        """Clock for an independent concurrent lane starting at ``now()``."""

    def sync_to(self, t: Real) -> None:
        """Move this lane forward to ``t`` if it is behind."""


class SimulatedClock:
    """Deterministic clock that only moves when told to."""

    def __init__(self, start_ms: float = 0):
        self._now = Fraction(start_ms)
        self._lock = threading.Lock()

    def now(self) -> Fraction:
        return self._now

    def advance(self, ms: float) -> None:
        if ms < 0:
            raise ValueError(f"cannot advance by a negative duration ({ms} ms)")
        with self._lock:
            self._now += Fraction(ms)

    def fork(self) -> "SimulatedClock":
        return SimulatedClock(self._now)

    def sync_to(self, t: Real) -> None:
        with self._lock:
            if t > self._now:
                self._now = Fraction(t)


class MonotonicClock:
    """Wall clock backed by ``time.perf_counter_ns``.

    ``advance`` sleeps, so the simulated backends also work (slowly) in real
    time.
    """

    def now(self) -> float:
        return time.perf_counter_ns() / 1e6

    def advance(self, ms: float) -> None:
        time.sleep(ms / 1000.0)

    def fork(self) -> "MonotonicClock":
        return self

    def sync_to(self, t: Real) -> None:
        pass
