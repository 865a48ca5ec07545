import heapq
import itertools
from typing import Callable, List, Optional, Tuple

from ..medium.base import Clock

Callback = Callable[[float], None]


class SimClock(Clock):
    """
    Virtual time driven by an event queue ordered by (time, insertion seq).
    Time never decreases; callbacks receive the event time.
    """

    def __init__(self, start: float = 0.0):
        self._now = start
        self._queue: List[Tuple[float, int, Callback]] = []
        self._seq = itertools.count()
        self.events_processed = 0

    def now(self) -> float:
        return self._now

    def schedule(self, at: float, callback: Callback) -> None:
        if at < self._now:
            raise ValueError(f"cannot schedule at {at} before now {self._now}")
        heapq.heappush(self._queue, (at, next(self._seq), callback))

    def call_later(self, delay: float, callback: Callback) -> None:
        self.schedule(self._now + delay, callback)

    def run(self, until: Optional[float] = None) -> int:
        """
        Process events up to and including `until` (or until the queue
        drains). Returns the number of events processed.
        """
        processed = 0
        while self._queue:
            at = self._queue[0][0]
            if until is not None and at > until:
                break
            _, _, callback = heapq.heappop(self._queue)
            self._now = at
            callback(at)
            processed += 1
        if until is not None and until > self._now:
            self._now = until
        self.events_processed += processed
        return processed

    def __len__(self) -> int:
        return len(self._queue)
