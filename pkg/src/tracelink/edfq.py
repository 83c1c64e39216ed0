"""Earliest-deadline-first queue with per-packet serialization times.

Each admitted packet carries the earliest time it may start transmitting
(its deadline) and the time it occupies the link.  The queue tracks when
the link becomes free again; a packet departs at
``max(busy_until, deadline)`` and is delivered ``tx_duration`` later.
Packets with equal deadlines leave in arrival order.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any, NamedTuple


@dataclass(slots=True)
class ScheduledPacket:
    deadline_us: int
    tx_duration_us: int
    wire_size_bytes: int
    route_id: int = 0
    seq: int = 0
    flow_tag: Any = None
    duplicate: bool = False
    segment_index: int = 0


class Departure(NamedTuple):
    packet: ScheduledPacket
    start_us: int
    delivery_us: int


@dataclass
class QueueState:
    pending: list = field(default_factory=list)
    busy_until_us: int = 0
    size_bytes: int = 0
    size_packets: int = 0
    last_deadline_by_route: dict = field(default_factory=dict)

    def __len__(self):
        return self.size_packets

    def push(self, p: ScheduledPacket) -> None:
        heapq.heappush(self.pending, (p.deadline_us, p.seq, p))
        self.size_bytes += p.wire_size_bytes
        self.size_packets += 1

    def peek(self) -> ScheduledPacket | None:
        return self.pending[0][2] if self.pending else None

    def next_event_time(self) -> int | None:
        """When the head packet may start; ``None`` for an empty queue."""
        if not self.pending:
            return None
        deadline = self.pending[0][0]
        return deadline if deadline > self.busy_until_us else self.busy_until_us

    def pop_due(self, now_us: int) -> Departure | None:
        """Release the head packet if the link is free and its deadline passed.

        The transmission starts at the scheduled instant (``next_event_time``),
        not at ``now_us``, so a late caller does not shift later departures.
        """
        if not self.pending:
            return None
        deadline = self.pending[0][0]
        start = deadline if deadline > self.busy_until_us else self.busy_until_us
        if now_us < start:
            return None
        _, _, p = heapq.heappop(self.pending)
        self.size_bytes -= p.wire_size_bytes
        self.size_packets -= 1
        delivery = start + p.tx_duration_us
        self.busy_until_us = delivery
        return Departure(p, start, delivery)
