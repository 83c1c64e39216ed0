"""Trace-driven dynamic link emulation.

Replays timelines of link characteristics (delay, jitter, rate, loss,
duplication, queue limit, route ordering) against packet streams, either
in deterministic virtual time (:mod:`tracelink.harness`) or against live
UDP traffic (:mod:`tracelink.relay`).
"""

from .edfq import Departure, QueueState, ScheduledPacket
from .errors import (
    AlreadyMember,
    BindError,
    EmptyTimeline,
    IllegalTransition,
    NotReady,
    ParseError,
    ScenarioError,
    StageError,
    TracelinkError,
    WrongStage,
)
from .instance import ContinueMode, Instance, InstanceConfig, QueueLimitUnit, Stage
from .rng import EffectRng
from .syncgroup import SyncRegistry
from .trace import (
    Timeline,
    TraceEntry,
    TraceFormat,
    append_trace,
    entry_at_offset,
    format_trace,
    load_trace,
    parse_trace,
)

__version__ = "0.1.0"
