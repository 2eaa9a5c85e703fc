"""Minimal discrete-event scheduler on a simulated clock."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable


@dataclass(order=True)
class Event:
    time: datetime
    seq: int
    kind: str = field(compare=False)
    action: Callable[[], Any] = field(compare=False, repr=False)


class Scheduler:
    def __init__(self, start: datetime):
        self.now = start
        self._queue: list[Event] = []
        self._seq = itertools.count()
        self.processed = 0

    def at(self, time: datetime, kind: str, action: Callable[[], Any]) -> Event:
        if time < self.now:
            raise ValueError(f"cannot schedule {kind} in the past ({time} < {self.now})")
        ev = Event(time, next(self._seq), kind, action)
        heapq.heappush(self._queue, ev)
        return ev

    def __len__(self) -> int:
        return len(self._queue)

    def run(self, until: datetime | None = None) -> None:
        while self._queue:
            if until is not None and self._queue[0].time > until:
                break
            ev = heapq.heappop(self._queue)
            self.now = ev.time
            ev.action()
            self.processed += 1
