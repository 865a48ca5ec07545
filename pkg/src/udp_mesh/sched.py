"""
The prioritized virtual channel.

Every pending fragment of a node, across topics and destinations, is ordered
by (priority, enqueue_seq). Fragments are kept in one heap per destination so
that a destination with a full window can be skipped without disturbing the
order of anything queued behind it.

Discarding a transfer is lazy: its entries stay in the heap and are skipped
when they surface, so finishing a transfer costs O(1) however deep the
destination's queue is.
"""
import heapq
import itertools
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Tuple

from .config import DEFAULT_PRIORITY
from .wire import BROADCAST_ID


@dataclass(frozen=True, slots=True)
class QueuedFragment:
    dest_id: int
    message_id: int
    frag_index: int
    priority: int
    enqueue_seq: int
    size: int = 0

    @property
    def key(self) -> Tuple[int, int]:
        return self.priority, self.enqueue_seq


_Entry = Tuple[int, int, QueuedFragment]
_TransferKey = Tuple[int, int]


class Scheduler:
    def __init__(self, prioritize: bool = True, default_priority: int = DEFAULT_PRIORITY):
        self.prioritize = prioritize
        self.default_priority = default_priority
        self._queues: Dict[int, List[_Entry]] = {}
        self._seq = itertools.count()
        self._topic_priority: Dict[str, int] = {}
        # live entries and bytes per transfer; discarded entries are not counted
        self._live: Counter = Counter()
        self._live_bytes: Counter = Counter()
        self._dest_bytes: Counter = Counter()
        self._discarded: Counter = Counter()
        self._size = 0
        self.dropped = 0

    # Topic priorities

    def set_topic_priority(self, topic: str, priority: int) -> None:
        if not 0 <= priority <= 255:
            raise ValueError(f"priority {priority} outside 0-255")
        self._topic_priority[topic] = priority

    def priority_for(self, topic: str) -> int:
        return self._topic_priority.get(topic, self.default_priority)

    def topic_priorities(self) -> Dict[str, int]:
        return dict(self._topic_priority)

    # Queue

    def push(self, dest_id: int, message_id: int, frag_index: int, priority: int, size: int = 0) -> QueuedFragment:
        """Assign the next enqueue_seq and enqueue."""
        frag = QueuedFragment(dest_id, message_id, frag_index, priority, next(self._seq), size)
        self.enqueue(frag)
        return frag

    def enqueue(self, frag: QueuedFragment) -> None:
        rank = frag.priority if self.prioritize else 0
        heapq.heappush(self._queues.setdefault(frag.dest_id, []), (rank, frag.enqueue_seq, frag))
        key = (frag.dest_id, frag.message_id)
        self._live[key] += 1
        self._live_bytes[key] += frag.size
        self._dest_bytes[frag.dest_id] += frag.size
        self._size += 1

    def dequeue_eligible(
        self,
        window_state: Mapping[int, int],
        is_online: Callable[[int], bool] = lambda _: True,
    ) -> Optional[QueuedFragment]:
        """
        Pop the least-key fragment whose destination is Online and has a free
        window slot. Broadcast fragments are never window-gated.

        Queues for Offline destinations are dropped on the way; the owning
        transfers are aborted by the reliable layer.
        """
        best: Optional[_Entry] = None
        for dest_id in list(self._queues):
            heap = self._queues[dest_id]
            self._skip_discarded(heap)
            if not heap:
                del self._queues[dest_id]
                continue
            if dest_id != BROADCAST_ID:
                if not is_online(dest_id):
                    self.dropped += len(self.drop_destination(dest_id))
                    continue
                if window_state.get(dest_id, 0) <= 0:
                    continue
            if best is None or heap[0][:2] < best[:2]:
                best = heap[0]

        if best is None:
            return None
        frag = best[2]
        heapq.heappop(self._queues[frag.dest_id])
        self._forget(frag)
        return frag

    def discard(self, dest_id: int, message_id: int) -> int:
        """Remove every queued fragment of one transfer."""
        key = (dest_id, message_id)
        removed = self._live.pop(key, 0)
        if removed:
            self._discarded[key] += removed
            self._dest_bytes[dest_id] -= self._live_bytes.pop(key, 0)
            self._size -= removed
        return removed

    def drop_destination(self, dest_id: int) -> List[QueuedFragment]:
        """Empty one destination's queue, returning its live fragments in order."""
        live = []
        for entry in sorted(self._queues.pop(dest_id, [])):
            frag = entry[2]
            key = (dest_id, frag.message_id)
            if self._discarded[key]:
                self._release_discarded(key)
            else:
                self._forget(frag)
                live.append(frag)
        self._dest_bytes.pop(dest_id, None)
        return live

    def queued_bytes(self, dest_id: int) -> int:
        return self._dest_bytes.get(dest_id, 0)

    def __len__(self) -> int:
        return self._size

    def _skip_discarded(self, heap: List[_Entry]) -> None:
        while heap:
            frag = heap[0][2]
            key = (frag.dest_id, frag.message_id)
            if not self._discarded[key]:
                return
            heapq.heappop(heap)
            self._release_discarded(key)

    def _release_discarded(self, key: _TransferKey) -> None:
        self._discarded[key] -= 1
        if self._discarded[key] <= 0:
            del self._discarded[key]

    def _forget(self, frag: QueuedFragment) -> None:
        key = (frag.dest_id, frag.message_id)
        self._live[key] -= 1
        self._live_bytes[key] -= frag.size
        if self._live[key] <= 0:
            del self._live[key]
            self._live_bytes.pop(key, None)
        self._dest_bytes[frag.dest_id] -= frag.size
        if self._dest_bytes[frag.dest_id] <= 0:
            del self._dest_bytes[frag.dest_id]
        self._size -= 1
