"""Virtual-time simulation of an emulated path between two test systems.

Traffic from A to B crosses the *forward* instance; probe echoes return
through the optional *reverse* instance.  Everything runs on a virtual
microsecond clock, so a run is fully determined by the scenario and the
instance seeds and finishes far faster than real time.

A scenario can be built in code or loaded from YAML::

    seed: 7
    forward:
      trace: staircase.csv        # relative to the scenario file
      format: SIMPLE
      continue: HOLD              # HOLD | CLEAN | LOOP
      queue_limit_unit: PACKETS   # PACKETS | BYTES
      overhead_bytes: 0
      segment_size_bytes: 0
      syncgroup: 1                # optional
      start: ARM                  # LOAD | ARM | RUN
    reverse: {...}                # optional, same keys
    traffic:
      flood: {packet_size: 1500, bitrate_bps: 60000000, start_us: 0, stop_us: 50000000}
      probes: {interval_us: 100000, count: 500, size: 64, start_us: 0}
    measurement:
      window_us: 1000000
      duration_us: 50000000       # default: end of traffic emission
"""

from __future__ import annotations

import csv
import heapq
import io
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import ParseError, ScenarioError, StageError
from .instance import ContinueMode, Instance, InstanceConfig, InstanceStats, Stage
from .syncgroup import SyncRegistry
from .trace import Timeline, TraceFormat, load_trace

THROUGHPUT_HEADER = ("window_start_us", "bps")
RTT_HEADER = ("probe_id", "send_us", "recv_us", "rtt_us", "lost")


class VirtualClock:
    """Event list ordered by (time, insertion order)."""

    def __init__(self):
        self.now_us = 0
        self._events = []
        self._n = 0

    def __len__(self):
        return len(self._events)

    def schedule(self, time_us: int, fn, arg=None) -> None:
        if time_us < self.now_us:
            raise ValueError(f"cannot schedule at {time_us} us, clock is at {self.now_us} us")
        self._n += 1
        heapq.heappush(self._events, (time_us, self._n, fn, arg))

    def run(self, until_us: int | None = None) -> None:
        events = self._events
        pop = heapq.heappop
        while events:
            if until_us is not None and events[0][0] > until_us:
                break
            t, _, fn, arg = pop(events)
            self.now_us = t
            fn(arg)


# -- traffic ------------------------------------------------------------


@dataclass(frozen=True)
class FloodSpec:
    bitrate_bps: int
    stop_us: int
    packet_size: int = 1500
    start_us: int = 0

    def __post_init__(self):
        if self.bitrate_bps <= 0:
            raise ScenarioError("flood bitrate_bps must be positive")
        if self.packet_size <= 0:
            raise ScenarioError("flood packet_size must be positive")
        if self.start_us < 0 or self.stop_us < self.start_us:
            raise ScenarioError(
                f"flood stop_us ({self.stop_us}) must not precede start_us ({self.start_us})"
            )


@dataclass(frozen=True)
class ProbeSpec:
    interval_us: int
    count: int
    size: int = 64
    start_us: int = 0

    def __post_init__(self):
        if self.interval_us <= 0:
            raise ScenarioError("probe interval_us must be positive")
        if self.count < 0 or self.size <= 0 or self.start_us < 0:
            raise ScenarioError("probe count, size and start_us must be non-negative (size > 0)")


def flood_generator(spec: FloodSpec):
    """Emission times of a constant-bitrate flood on [start_us, stop_us).

    Spacing is ``packet_size * 8 / bitrate`` seconds; emission ``k`` is
    placed at the floor of its exact time, so non-integer spacings do not
    drift.
    """
    bits = spec.packet_size * 8 * 1_000_000
    k = 0
    while True:
        t = spec.start_us + bits * k // spec.bitrate_bps
        if t >= spec.stop_us:
            return
        yield t
        k += 1


def probe_generator(spec: ProbeSpec):
    """``(probe_id, send_us)`` for each probe."""
    for i in range(spec.count):
        yield i, spec.start_us + i * spec.interval_us


# -- scenario -----------------------------------------------------------


@dataclass(frozen=True)
class LinkSpec:
    config: InstanceConfig = field(default_factory=InstanceConfig)
    timeline: Timeline | None = None
    start: Stage = Stage.ARM

    def __post_init__(self):
        start = Stage(str(self.start.value if isinstance(self.start, Stage) else self.start).upper())
        if start not in (Stage.LOAD, Stage.ARM, Stage.RUN):
            raise ScenarioError(f"initial stage must be LOAD, ARM or RUN, not {start.name}")
        object.__setattr__(self, "start", start)


@dataclass(frozen=True)
class Scenario:
    forward: LinkSpec
    reverse: LinkSpec | None = None
    flood: FloodSpec | None = None
    probes: ProbeSpec | None = None
    window_us: int = 1_000_000
    duration_us: int | None = None
    record_deliveries: bool = False

    def __post_init__(self):
        if self.window_us < 1000:
            raise ScenarioError("window_us must be at least 1000")
        if self.duration_us is not None and self.duration_us <= 0:
            raise ScenarioError("duration_us must be positive")

    def with_seed(self, seed: int) -> "Scenario":
        """Reseed both instances: forward gets ``seed``, reverse ``seed + 1``."""
        fwd = replace(self.forward, config=replace(self.forward.config, rng_seed=seed % 2**64))
        rev = self.reverse
        if rev is not None:
            rev = replace(rev, config=replace(rev.config, rng_seed=(seed + 1) % 2**64))
        return replace(self, forward=fwd, reverse=rev)

    def traffic_end_us(self) -> int:
        end = 0
        if self.flood is not None:
            end = max(end, self.flood.stop_us)
        if self.probes is not None and self.probes.count:
            end = max(end, self.probes.start_us + self.probes.count * self.probes.interval_us)
        return end


@dataclass(frozen=True)
class RttSample:
    probe_id: int
    send_us: int
    recv_us: int | None

    @property
    def lost(self) -> bool:
        return self.recv_us is None

    @property
    def rtt_us(self) -> int | None:
        return None if self.recv_us is None else self.recv_us - self.send_us


@dataclass
class MetricsRecord:
    window_us: int
    throughput: list  # (window_start_us, bps)
    rtt: list  # RttSample
    sent: int
    forward: InstanceStats
    reverse: InstanceStats | None = None
    deliveries: list | None = None  # (kind, id, send_us, delivery_us, duplicate)
    wall_time_s: float = 0.0

    @property
    def lost_probes(self) -> int:
        return sum(1 for s in self.rtt if s.lost)


# -- simulation ---------------------------------------------------------


class _Link:
    """An instance driven by the virtual clock's watchdog events."""

    def __init__(self, clock: VirtualClock, instance: Instance, on_departure):
        self.clock = clock
        self.instance = instance
        self.on_departure = on_departure
        self._wd = None

    def arrive(self, pkt) -> None:
        size, tag = pkt
        self.instance.enqueue(size, self.clock.now_us, tag)
        self._arm()

    def _arm(self) -> None:
        t = self.instance.queue.next_event_time()
        if t is not None and (self._wd is None or t < self._wd):
            self._wd = t
            self.clock.schedule(t, self._fire, t)

    def _fire(self, t) -> None:
        if t != self._wd:
            return
        self._wd = None
        dequeue = self.instance.dequeue
        on_departure = self.on_departure
        dep = dequeue(t)
        while dep is not None:
            on_departure(dep)
            dep = dequeue(t)
        self._arm()


def _build_instance(spec: LinkSpec, name: str, registry: SyncRegistry) -> Instance:
    inst = Instance(spec.config, name=name, registry=registry)
    if spec.timeline is not None:
        inst.load_timeline(spec.timeline)
    return inst


def _apply_start(inst: Instance, spec: LinkSpec) -> None:
    # No trace means the instance stays in LOAD, i.e. transparent.
    if inst.stage is not Stage.LOAD or spec.start is Stage.LOAD or not inst.timeline:
        return
    try:
        inst.set_stage(spec.start, 0)
    except StageError as exc:
        raise ScenarioError(str(exc)) from exc


def run_scenario(scenario: Scenario) -> MetricsRecord:
    """Run ``scenario`` to completion and collect its metrics."""
    t0 = time.perf_counter()
    end = scenario.duration_us or scenario.traffic_end_us()
    if end <= 0:
        raise ScenarioError("scenario has no traffic and no duration")
    window = scenario.window_us
    n_windows = -(-end // window)

    clock = VirtualClock()
    registry = SyncRegistry()
    fwd = _build_instance(scenario.forward, "forward", registry)
    rev = None
    if scenario.reverse is not None:
        rev = _build_instance(scenario.reverse, "reverse", registry)
    # ARM before RUN so a RUN member starts an ARM partner, as a manual start would.
    for inst, spec in sorted(
        [(fwd, scenario.forward)] + ([(rev, scenario.reverse)] if rev else []),
        key=lambda pair: pair[1].start is Stage.RUN,
    ):
        _apply_start(inst, spec)

    bits = [0] * n_windows
    received = {}
    deliveries = [] if scenario.record_deliveries else None

    def finish_probe(dep):
        kind, pid, _ = dep.packet.flow_tag
        if pid not in received:
            received[pid] = dep.delivery_us

    rev_link = _Link(clock, rev, finish_probe) if rev is not None else None

    def forward_departure(dep):
        p = dep.packet
        k = dep.delivery_us // window
        if k < n_windows:
            bits[k] += p.wire_size_bytes * 8
        tag = p.flow_tag
        if deliveries is not None:
            deliveries.append((tag[0], tag[1], tag[2], dep.delivery_us, p.duplicate))
        if tag[0] == "probe":
            if rev_link is None:
                finish_probe(dep)
            else:
                clock.schedule(dep.delivery_us, rev_link.arrive, (scenario.probes.size, tag))

    fwd_link = _Link(clock, fwd, forward_departure)

    if scenario.flood is not None:
        flood_times = flood_generator(scenario.flood)
        flood_size = scenario.flood.packet_size
        counter = iter(range(2**62))

        def emit_flood(t):
            fwd_link.arrive((flood_size, ("flood", next(counter), t)))
            nxt = next(flood_times, None)
            if nxt is not None:
                clock.schedule(nxt, emit_flood, nxt)

        first = next(flood_times, None)
        if first is not None:
            clock.schedule(first, emit_flood, first)

    probes_sent = []
    if scenario.probes is not None:
        probe_size = scenario.probes.size
        for pid, t in probe_generator(scenario.probes):
            probes_sent.append((pid, t))
            clock.schedule(t, fwd_link.arrive, (probe_size, ("probe", pid, t)))

    clock.run()

    throughput = [(k * window, b * 1_000_000 // window) for k, b in enumerate(bits)]
    rtt = [RttSample(pid, t, received.get(pid)) for pid, t in probes_sent]
    return MetricsRecord(
        window_us=window,
        throughput=throughput,
        rtt=rtt,
        sent=fwd.counters.received,
        forward=fwd.stats(),
        reverse=rev.stats() if rev is not None else None,
        deliveries=deliveries,
        wall_time_s=time.perf_counter() - t0,
    )


def replay_arrivals(config: InstanceConfig, timeline: Timeline, arrivals, start=Stage.ARM):
    """Feed recorded ``(arrival_us, size)`` pairs through a fresh instance.

    Departures due at or before an arrival are released first.  Returns
    ``(outcomes, departures)``; used to predict a live relay's decisions.
    """
    inst = Instance(config, name="replay", registry=SyncRegistry())
    inst.load_timeline(timeline)
    if start is not Stage.LOAD:
        inst.set_stage(start, arrivals[0][0] if arrivals else 0)
    outcomes = []
    departures = []
    for arrival_us, size in arrivals:
        dep = inst.dequeue(arrival_us)
        while dep is not None:
            departures.append(dep)
            dep = inst.dequeue(arrival_us)
        outcomes.append(inst.enqueue(size, arrival_us))
    while True:
        t = inst.next_event_time()
        if t is None:
            break
        departures.append(inst.dequeue(t))
    return outcomes, departures


# -- summaries and export -----------------------------------------------


def trace_segments(timeline: Timeline, replay_start_us: int | None, mode: ContinueMode,
                   end_us: int):
    """``(start_us, stop_us, entry_index)`` for each replayed entry up to ``end_us``.

    After a HOLD replay the last entry extends to ``end_us``; CLEAN yields
    ``entry_index = None`` for the transparent tail.
    """
    if replay_start_us is None or not len(timeline):
        return []
    segments = []
    t = replay_start_us
    while t < end_us:
        for i, entry in enumerate(timeline):
            if t >= end_us:
                break
            segments.append((t, min(t + entry.keep_us, end_us), i))
            t += entry.keep_us
        if mode is not ContinueMode.LOOP:
            break
    if t < end_us:
        if mode is ContinueMode.HOLD:
            s, _, i = segments[-1]
            segments[-1] = (s, end_us, i)
        else:
            segments.append((t, end_us, None))
    return segments


def segment_summary(metrics: MetricsRecord, timeline: Timeline, mode=ContinueMode.HOLD,
                    exclude_windows: int = 1):
    """Mean throughput and RTT per replayed trace entry.

    Windows within ``exclude_windows`` of a segment boundary (including the
    window containing it) are left out of the throughput mean, and so are
    probes sent during them.
    """
    window = metrics.window_us
    n = len(metrics.throughput)
    end = n * window
    segs = trace_segments(timeline, metrics.forward.replay_start_us, ContinueMode(mode), end)
    bps = np.array([b for _, b in metrics.throughput], dtype=np.float64)
    boundaries = sorted({s for s, _, _ in segs} | {e for _, e, _ in segs})
    excluded = np.zeros(n, dtype=bool)
    for b in boundaries:
        k = b // window
        excluded[max(0, k - exclude_windows):min(n, k + exclude_windows + 1)] = True
    rows = []
    for s, e, i in segs:
        lo, hi = -(-s // window), e // window
        keep = [k for k in range(lo, hi) if not excluded[k]]
        entry = timeline[i] if i is not None else None
        rtts = [
            r.rtt_us for r in metrics.rtt
            if s <= r.send_us < e and not r.lost and not excluded[min(r.send_us // window, n - 1)]
        ]
        rows.append({
            "entry": i,
            "start_us": s,
            "stop_us": e,
            "rate_bps": entry.rate_bps if entry else 0,
            "delay_us": entry.delay_us if entry else 0,
            "windows": len(keep),
            "mean_bps": float(bps[keep].mean()) if keep else math.nan,
            "probes": len(rtts),
            "mean_rtt_us": float(np.mean(rtts)) if rtts else math.nan,
        })
    return rows


def _write_rows(path: Path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")


def export_metrics(metrics: MetricsRecord, out_dir) -> tuple[Path, Path]:
    """Write ``throughput.csv`` and ``rtt.csv`` into ``out_dir``.

    throughput: window_start_us, bps (delivered wire bits per second)
    rtt: probe_id, send_us, recv_us, rtt_us, lost (recv/rtt empty when lost)
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tp, rt = out / "throughput.csv", out / "rtt.csv"
    _write_rows(tp, THROUGHPUT_HEADER, metrics.throughput)
    _write_rows(rt, RTT_HEADER, (
        (s.probe_id, s.send_us, "" if s.lost else s.recv_us,
         "" if s.lost else s.rtt_us, int(s.lost))
        for s in metrics.rtt
    ))
    return tp, rt


# -- scenario files -----------------------------------------------------

_LINK_KEYS = {"trace", "format", "continue", "queue_limit_unit", "overhead_bytes",
              "segment_size_bytes", "syncgroup", "start", "seed"}


def _link_from_dict(data: dict, base: Path, default_seed: int) -> LinkSpec:
    unknown = set(data) - _LINK_KEYS
    if unknown:
        raise ScenarioError(f"unknown instance keys: {', '.join(sorted(unknown))}")
    fmt = TraceFormat.parse(data.get("format", "SIMPLE"))
    try:
        config = InstanceConfig(
            ingest_format=fmt,
            continue_mode=data.get("continue", "HOLD"),
            queue_limit_unit=data.get("queue_limit_unit", "PACKETS"),
            overhead_bytes=int(data.get("overhead_bytes", 0)),
            segment_size_bytes=int(data.get("segment_size_bytes", 0)),
            rng_seed=int(data.get("seed", default_seed)),
            syncgroup_id=data.get("syncgroup"),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    timeline = None
    if data.get("trace") is not None:
        path = base / str(data["trace"])
        if not path.is_file():
            raise ScenarioError(f"trace file not found: {path}")
        try:
            timeline = load_trace(path, fmt)
        except ParseError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
    return LinkSpec(config=config, timeline=timeline, start=str(data.get("start", "ARM")))


def scenario_from_dict(data: dict, base_dir=".") -> Scenario:
    base = Path(base_dir)
    if "forward" not in data:
        raise ScenarioError("scenario needs a 'forward' instance")
    seed = int(data.get("seed", default_seed()))
    forward = _link_from_dict(data["forward"] or {}, base, seed)
    reverse = None
    if data.get("reverse") is not None:
        reverse = _link_from_dict(data["reverse"], base, (seed + 1) % 2**64)
    traffic = data.get("traffic") or {}
    flood = FloodSpec(**traffic["flood"]) if traffic.get("flood") else None
    probes = ProbeSpec(**traffic["probes"]) if traffic.get("probes") else None
    meas = data.get("measurement") or {}
    return Scenario(
        forward=forward,
        reverse=reverse,
        flood=flood,
        probes=probes,
        window_us=int(meas.get("window_us", 1_000_000)),
        duration_us=meas.get("duration_us"),
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: expected a mapping at top level")
    try:
        return scenario_from_dict(data, path.parent)
    except TypeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def default_seed(fallback: int = 0) -> int:
    """Seed from ``TRACELINK_SEED`` if set."""
    value = os.environ.get("TRACELINK_SEED")
    return int(value) if value else fallback
