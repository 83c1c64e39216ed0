"""A single emulated link: stage machine, timeline replay and per-packet effects."""

from __future__ import annotations

import bisect
import enum
from dataclasses import asdict, dataclass, field
from typing import Any, NamedTuple

from .edfq import Departure, QueueState, ScheduledPacket
from .errors import IllegalTransition, NotReady, WrongStage
from .rng import U32_MAX, EffectRng
from .syncgroup import SyncRegistry, default_registry
from .trace import Timeline, TraceEntry, TraceFormat, append_trace, entry_at_offset


class Stage(enum.Enum):
    LOAD = "LOAD"
    ARM = "ARM"
    RUN = "RUN"
    FINISH = "FINISH"
    CLEAR = "CLEAR"


class ContinueMode(enum.Enum):
    HOLD = "HOLD"
    CLEAN = "CLEAN"
    LOOP = "LOOP"


class QueueLimitUnit(enum.Enum):
    BYTES = "BYTES"
    PACKETS = "PACKETS"


def _enum(cls, value):
    if isinstance(value, cls):
        return value
    return cls(str(value).strip().upper())


# Requesting the current stage is a no-op for LOAD, ARM and RUN.
# FINISH is only ever entered by the replay itself.
_LEGAL = {
    Stage.LOAD: {Stage.LOAD, Stage.ARM, Stage.RUN, Stage.CLEAR},
    Stage.ARM: {Stage.ARM, Stage.RUN, Stage.LOAD},
    Stage.RUN: {Stage.RUN, Stage.LOAD},
    Stage.FINISH: {Stage.LOAD, Stage.CLEAR},
}


@dataclass(frozen=True)
class InstanceConfig:
    ingest_format: TraceFormat = TraceFormat.SIMPLE
    continue_mode: ContinueMode = ContinueMode.HOLD
    queue_limit_unit: QueueLimitUnit = QueueLimitUnit.PACKETS
    overhead_bytes: int = 0
    segment_size_bytes: int = 0
    rng_seed: int = 0
    syncgroup_id: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "ingest_format", TraceFormat.parse(self.ingest_format))
        object.__setattr__(self, "continue_mode", _enum(ContinueMode, self.continue_mode))
        object.__setattr__(self, "queue_limit_unit", _enum(QueueLimitUnit, self.queue_limit_unit))
        if self.overhead_bytes < 0:
            raise ValueError("overhead_bytes must be non-negative")
        if self.segment_size_bytes != 0 and self.segment_size_bytes < 64:
            raise ValueError("segment_size_bytes must be 0 (disabled) or at least 64")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")
        if self.syncgroup_id is not None and self.syncgroup_id < 0:
            raise ValueError("syncgroup_id must be non-negative")


@dataclass
class Counters:
    received: int = 0
    delivered: int = 0
    dropped_loss: int = 0
    dropped_queue: int = 0
    duplicated: int = 0
    segmented: int = 0  # extra packets created by segmentation


class Outcome(NamedTuple):
    """Result of one enqueue: admitted packets and the reasons of any drops."""

    accepted: list
    drops: list

    @property
    def dropped(self) -> bool:
        return not self.accepted


@dataclass(frozen=True)
class InstanceStats:
    name: str
    stage: str
    continue_mode: str
    replay_start_us: int | None
    active_index: int | None
    active_entry: dict | None
    loop_count: int
    timeline_entries: int
    total_duration_us: int
    queue_packets: int
    queue_bytes: int
    busy_until_us: int
    counters: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


class Instance:
    """One emulated egress link replaying a timeline of link characteristics.

    Packets are handed to :meth:`enqueue` at their arrival time; the
    characteristics active at that instant are applied and the resulting
    packets are stored in the EDF queue.  :meth:`dequeue` releases them.
    Calls for one instance must be serialized by the caller.
    """

    def __init__(self, config: InstanceConfig | None = None, name: str = "instance",
                 registry: SyncRegistry | None = None):
        self.config = config or InstanceConfig()
        self.name = name
        self.registry = registry if registry is not None else default_registry
        self.timeline = Timeline()
        self.queue = QueueState()
        self.rng = EffectRng(self.config.rng_seed)
        self.counters = Counters()
        self.stage = Stage.LOAD
        self.replay_start_us: int | None = None
        self.active_index = 0
        self._period = 0
        self._seq = 0
        if self.config.syncgroup_id is not None:
            self.registry.join(self.config.syncgroup_id, self)

    def __repr__(self):
        return f"<Instance {self.name} {self.stage.name} {self.timeline!r}>"

    # -- timeline -------------------------------------------------------

    def ingest(self, text: str) -> int:
        """Append Trace File text; only allowed in LOAD. Returns the entry count."""
        if self.stage is not Stage.LOAD:
            raise WrongStage(f"{self.name}: trace ingest requires LOAD, stage is {self.stage.name}")
        self.timeline = append_trace(self.timeline, text, self.config.ingest_format)
        return len(self.timeline)

    def ingest_file(self, path) -> int:
        with open(path, encoding="utf-8", newline="") as fh:
            return self.ingest(fh.read())

    def load_timeline(self, timeline: Timeline) -> None:
        if self.stage is not Stage.LOAD:
            raise WrongStage(f"{self.name}: trace ingest requires LOAD, stage is {self.stage.name}")
        self.timeline = self.timeline.concat(timeline.entries)

    # -- stages ---------------------------------------------------------

    @property
    def running(self) -> bool:
        return self.stage is Stage.RUN

    def ready_to_start(self) -> bool:
        if self.stage is Stage.RUN:
            return True
        return self.stage in (Stage.LOAD, Stage.ARM) and len(self.timeline) > 0

    def _start_replay(self, now_us: int) -> None:
        self.stage = Stage.RUN
        self.replay_start_us = now_us
        self.active_index = 0
        self._period = 0

    def _trigger(self, now_us: int) -> None:
        group = self.config.syncgroup_id
        if group is None:
            self._start_replay(now_us)
        else:
            self.registry.trigger_start(group, now_us)

    def set_stage(self, requested, now_us: int = 0) -> Stage:
        requested = _enum(Stage, requested)
        current = self.stage
        if requested not in _LEGAL[current]:
            raise IllegalTransition(f"{self.name}: {current.name} -> {requested.name} is not allowed")
        if requested is current:
            return current
        if requested in (Stage.ARM, Stage.RUN) and not self.timeline:
            raise NotReady(f"{self.name}: no trace entries loaded", member=self)
        if requested is Stage.RUN:
            self._trigger(now_us)
        elif requested is Stage.ARM:
            self.stage = Stage.ARM
        elif requested is Stage.LOAD:
            self.stage = Stage.LOAD
            self.replay_start_us = None
            self.active_index = 0
            self._period = 0
        else:  # CLEAR
            self.timeline = Timeline()
            self.counters = Counters()
            self.queue.last_deadline_by_route.clear()
            self.replay_start_us = None
            self.active_index = 0
            self._period = 0
            self.stage = Stage.LOAD
        return self.stage

    # -- replay cursor --------------------------------------------------

    def advance_cursor(self, now_us: int) -> TraceEntry | None:
        """Entry active at ``now_us``; ``None`` means transparent.

        Walks forward from the current cursor.  In LOOP mode the offset is
        folded into the current period first, so whole periods are never
        walked.
        """
        stage = self.stage
        tl = self.timeline
        if stage is Stage.FINISH:
            if self.config.continue_mode is ContinueMode.HOLD:
                return tl[-1]
            return None
        if stage is not Stage.RUN:
            raise WrongStage(f"{self.name}: cursor only advances in RUN or FINISH")
        offset = now_us - self.replay_start_us
        if offset < 0:
            offset = 0
        total = tl.total_duration_us
        if offset >= total:
            mode = self.config.continue_mode
            if mode is ContinueMode.LOOP:
                period, offset = divmod(offset, total)
                if period != self._period:
                    self._period = period
                    self.active_index = 0
            else:
                self.stage = Stage.FINISH
                self.active_index = len(tl) - 1
                return tl[-1] if mode is ContinueMode.HOLD else None
        starts = tl.cumulative_starts_us
        i = self.active_index
        if offset < starts[i]:
            i = bisect.bisect_right(starts, offset) - 1
        else:
            n = len(starts)
            steps = 0
            while i + 1 < n and offset >= starts[i + 1]:
                i += 1
                steps += 1
                if steps == 16:
                    i = bisect.bisect_right(starts, offset) - 1
                    break
        self.active_index = i
        return tl[i]

    # -- packet path ----------------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _has_room(self, wire: int, q_limit: int) -> bool:
        if not q_limit:
            return True
        q = self.queue
        if self.config.queue_limit_unit is QueueLimitUnit.PACKETS:
            return q.size_packets < q_limit
        return q.size_bytes + wire <= q_limit

    def enqueue(self, payload_size_bytes: int, arrival_us: int, flow_tag: Any = None) -> Outcome:
        """Apply the active characteristics to one packet and queue the result."""
        counters = self.counters
        counters.received += 1
        if self.stage is Stage.ARM:
            try:
                self._trigger(arrival_us)
            except NotReady:
                pass
        entry = None
        if self.stage is Stage.RUN or self.stage is Stage.FINISH:
            entry = self.advance_cursor(arrival_us)
        cfg = self.config
        if entry is None:
            p = ScheduledPacket(arrival_us, 0, payload_size_bytes + cfg.overhead_bytes,
                                0, self._next_seq(), flow_tag)
            self.queue.push(p)
            return Outcome([p], [])

        seg = cfg.segment_size_bytes
        if seg and payload_size_bytes > seg:
            full, rest = divmod(payload_size_bytes, seg)
            sizes = [seg] * full + ([rest] if rest else [])
            counters.segmented += len(sizes) - 1
        else:
            sizes = [payload_size_bytes]

        rng = self.rng
        q = self.queue
        routes = q.last_deadline_by_route
        loss = entry.loss_prob
        dup = entry.dup_prob
        rate = entry.rate_bps
        route = entry.route_id
        q_limit = entry.q_limit
        accepted = []
        drops = []
        for index, size in enumerate(sizes):
            # Draws depend only on the entry, never on earlier outcomes.
            lost = loss == U32_MAX or (loss and rng.draw_u32("loss") < loss)
            dup_hit = dup == U32_MAX or (dup and rng.draw_u32("duplication") < dup)
            delay = rng.sample_jitter(entry.delay_us, entry.jitter_us)
            if lost:
                counters.dropped_loss += 1
                drops.append("loss")
                continue
            wire = size + cfg.overhead_bytes
            tx = -(-wire * 8_000_000 // rate) if rate else 0
            deadline = arrival_us + delay
            if route:
                last = routes.get(route)
                if last is not None and last > deadline:
                    deadline = last
            if self._has_room(wire, q_limit):
                p = ScheduledPacket(deadline, tx, wire, route, self._next_seq(), flow_tag,
                                    False, index)
                q.push(p)
                accepted.append(p)
                if route:
                    routes[route] = deadline
            else:
                counters.dropped_queue += 1
                drops.append("queue")
            if dup_hit:
                counters.duplicated += 1
                dup_deadline = deadline + entry.dup_delay_us
                if route:
                    last = routes.get(route)
                    if last is not None and last > dup_deadline:
                        dup_deadline = last
                if self._has_room(wire, q_limit):
                    d = ScheduledPacket(dup_deadline, tx, wire, route, self._next_seq(),
                                        flow_tag, True, index)
                    q.push(d)
                    accepted.append(d)
                    if route:
                        routes[route] = dup_deadline
                else:
                    counters.dropped_queue += 1
                    drops.append("queue-duplicate")
        return Outcome(accepted, drops)

    def next_event_time(self) -> int | None:
        return self.queue.next_event_time()

    def dequeue(self, now_us: int) -> Departure | None:
        dep = self.queue.pop_due(now_us)
        if dep is not None:
            self.counters.delivered += 1
        return dep

    # -- inspection -----------------------------------------------------

    def stats(self, now_us: int | None = None) -> InstanceStats:
        """Read-only snapshot.  With ``now_us`` the position is evaluated at
        that time instead of at the last packet, without moving the cursor."""
        entry = None
        index = None
        period = self._period
        stage = self.stage
        mode = self.config.continue_mode
        if stage is Stage.RUN:
            index = self.active_index
            if now_us is not None:
                offset = max(0, now_us - self.replay_start_us)
                total = self.timeline.total_duration_us
                if offset >= total and mode is ContinueMode.LOOP:
                    period, offset = divmod(offset, total)
                index = entry_at_offset(self.timeline, offset)
                if index is None:
                    index = len(self.timeline) - 1 if mode is ContinueMode.HOLD else None
        elif stage is Stage.FINISH and mode is ContinueMode.HOLD:
            index = len(self.timeline) - 1
        if index is not None:
            entry = asdict(self.timeline[index])
        return InstanceStats(
            name=self.name,
            stage=self.stage.name,
            continue_mode=self.config.continue_mode.name,
            replay_start_us=self.replay_start_us,
            active_index=index,
            active_entry=entry,
            loop_count=period,
            timeline_entries=len(self.timeline),
            total_duration_us=self.timeline.total_duration_us,
            queue_packets=self.queue.size_packets,
            queue_bytes=self.queue.size_bytes,
            busy_until_us=self.queue.busy_until_us,
            counters=asdict(self.counters),
        )
