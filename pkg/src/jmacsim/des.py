"""Deterministic discrete-event engine.

Simulation time is an integer count of nanoseconds since the start of the run.
Events with equal fire times are delivered in insertion order.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from typing import Any, Callable

import numpy as np

NS = 1
US = 1_000
MS = 1_000_000
S = 1_000_000_000
MIN = 60 * S
HOUR = 60 * MIN
DAY = 24 * HOUR


def to_ns(seconds: float) -> int:
    return int(round(seconds * S))


def to_seconds(ns: int) -> float:
    return ns / S


class SchedulingError(ValueError):
    """Raised when an event is scheduled before the current clock."""


class Event:
    __slots__ = ("fire_at", "seq", "target", "kind", "payload", "cancelled", "fired")

    def __init__(self, fire_at: int, target: int, kind: str, payload: Any = None):
        self.fire_at = fire_at
        self.seq = -1
        self.target = target
        self.kind = kind
        self.payload = payload
        self.cancelled = False
        self.fired = False

    def __repr__(self) -> str:
        return f"Event(t={self.fire_at}, target={self.target}, kind={self.kind!r}, seq={self.seq})"


class Simulator:
    """Event queue plus clock.

    ``handler`` is called with every delivered event. Handlers may schedule and
    cancel further events; the clock is already advanced to ``event.fire_at``.
    """

    def __init__(self, handler: Callable[[Event], None] | None = None, trace: bool = False):
        self.now = 0
        self.handler = handler
        self._queue: list[tuple[int, int, Event]] = []
        self._seq = 0
        self._trace = hashlib.blake2b(digest_size=16) if trace else None

    def schedule(self, event: Event) -> Event:
        if event.fire_at < self.now:
            raise SchedulingError(f"event at {event.fire_at} ns is before now={self.now} ns")
        event.seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (event.fire_at, event.seq, event))
        return event

    def at(self, fire_at: int, target: int, kind: str, payload: Any = None) -> Event:
        if fire_at < self.now:
            raise SchedulingError(f"event at {fire_at} ns is before now={self.now} ns")
        event = Event(fire_at, target, kind, payload)
        event.seq = seq = self._seq
        self._seq = seq + 1
        heapq.heappush(self._queue, (fire_at, seq, event))
        return event

    def cancel(self, handle: Event | None) -> bool:
        if handle is None or handle.fired or handle.cancelled:
            return False
        handle.cancelled = True
        return True

    def pending(self) -> int:
        return sum(1 for _, _, ev in self._queue if not ev.cancelled)

    def run_until(self, end: int) -> int:
        if end < self.now:
            raise SchedulingError(f"end={end} is before now={self.now}")
        queue = self._queue
        handler = self.handler
        trace = self._trace
        count = 0
        pop = heapq.heappop
        while queue and queue[0][0] <= end:
            fire_at, _, ev = pop(queue)
            if ev.cancelled:
                continue
            self.now = fire_at
            ev.fired = True
            count += 1
            if trace is not None:
                trace.update(f"{fire_at}:{ev.target}:{ev.kind};".encode())
            if handler is not None:
                handler(ev)
        self.now = end
        return count

    def trace_digest(self) -> str:
        if self._trace is None:
            raise RuntimeError("simulator was created without trace=True")
        return self._trace.hexdigest()


class RngStream:
    """Reproducible random stream keyed by ``(seed, run, node)``.

    Streams are derived with numpy's SeedSequence spawn keys, so adding a node
    or a run never perturbs another stream.
    """

    def __init__(self, seed: int, run: int = 0, node: int = 0):
        self.seed = seed
        self.stream_id = (run, node)
        ss = np.random.SeedSequence(seed, spawn_key=(run, node))
        state = ss.generate_state(4, dtype=np.uint32)
        self._rng = random.Random(int.from_bytes(state.tobytes(), "little"))

    def random(self) -> float:
        return self._rng.random()

    def uniform(self, lo: float, hi: float) -> float:
        return uniform(self, lo, hi)

    def uniform_ns(self, lo: int, hi: int) -> int:
        """Integer draw in ``[lo, hi)``."""
        if lo >= hi:
            raise ValueError(f"empty interval [{lo}, {hi})")
        return lo + int((hi - lo) * self._rng.random())

    def getstate(self):
        return self._rng.getstate()

    def setstate(self, state) -> None:
        self._rng.setstate(state)


def uniform(stream: RngStream, lo: float, hi: float) -> float:
    if not lo < hi:
        raise ValueError(f"uniform needs lo < hi, got [{lo}, {hi})")
    value = lo + (hi - lo) * stream.random()
    # float rounding can land exactly on hi
    return value if value < hi else lo
