"""Deterministic discrete-event scheduler.

Time is kept in integer milliseconds (one tick). Events at the same tick
run in the order they were scheduled.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Callable

TICK_MS = 1
EVENT_KINDS = ("deadline", "message-delivery", "scan", "scenario-action")


def to_ms(seconds: float) -> int:
    return int(round(seconds * 1000))


def fmt_ms(ms: int) -> str:
    return f"{ms // 1000}.{ms % 1000:03d}"


@dataclass(order=True)
class SimEvent:
    at: int
    seq: int
    target: str = field(compare=False)
    kind: str = field(compare=False)
    action: Callable[[], None] = field(compare=False, repr=False)
    cancelled: bool = field(default=False, compare=False)


class Simulator:
    def __init__(self) -> None:
        self.now_ms = 0
        self._queue: list[SimEvent] = []
        self._seq = itertools.count()
        self.trace: list[str] = []
        self.processed = 0
        self._stopped = False

    @property
    def now(self) -> float:
        return self.now_ms / 1000.0

    def schedule(self, at_ms: int, target: str, kind: str, action: Callable[[], None]) -> SimEvent:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        if at_ms < self.now_ms:
            raise ValueError(f"cannot schedule in the past ({at_ms} < {self.now_ms})")
        ev = SimEvent(at_ms, next(self._seq), target, kind, action)
        heapq.heappush(self._queue, ev)
        return ev

    def after(self, delay_s: float, target: str, kind: str, action: Callable[[], None]) -> SimEvent:
        return self.schedule(self.now_ms + max(0, to_ms(delay_s)), target, kind, action)

    def record(self, party: str, kind: str, detail: str = "") -> None:
        line = f"{fmt_ms(self.now_ms):>10} {party:<8} {kind:<16} {detail}".rstrip()
        self.trace.append(line)

    def stop(self) -> None:
        """Drop everything still queued; ``run`` returns after the current event."""
        self._stopped = True

    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def run(self, until_ms: int | None = None) -> None:
        while self._queue and not self._stopped:
            if until_ms is not None and self._queue[0].at > until_ms:
                break
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self.now_ms = ev.at
            self.processed += 1
            ev.action()
        if self._stopped:
            self._queue.clear()
        elif until_ms is not None and until_ms > self.now_ms:
            self.now_ms = until_ms
