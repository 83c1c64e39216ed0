"""Trace File parsing and the replay timeline.

A Trace File is a CSV document: one mandatory header line naming the
columns of the chosen format, followed by one row per timeline entry.
Every field is a strict decimal unsigned integer.  Blank lines and lines
starting with ``#`` are ignored.

Two column sets are accepted::

    SIMPLE:   keep_us, delay_us, rate_bps, loss_prob, q_limit
    EXTENDED: keep_us, delay_us, jitter_us, rate_bps, loss_prob,
              dup_prob, dup_delay_us, q_limit, route_id

Columns missing from SIMPLE are zero.
"""

from __future__ import annotations

import bisect
import enum
import re
from dataclasses import dataclass, fields
from itertools import accumulate

from .errors import (
    EmptyTimeline,
    MissingHeader,
    NonNumericField,
    UnknownColumn,
    ValueOverflow,
    WrongColumnCount,
    ZeroKeepUs,
)

U32_MAX = 2**32 - 1
U64_MAX = 2**64 - 1


class TraceFormat(enum.Enum):
    SIMPLE = "SIMPLE"
    EXTENDED = "EXTENDED"

    @classmethod
    def parse(cls, value) -> "TraceFormat":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().upper())

    @property
    def columns(self) -> tuple[str, ...]:
        return _COLUMNS[self]


_COLUMNS = {
    TraceFormat.SIMPLE: ("keep_us", "delay_us", "rate_bps", "loss_prob", "q_limit"),
    TraceFormat.EXTENDED: (
        "keep_us",
        "delay_us",
        "jitter_us",
        "rate_bps",
        "loss_prob",
        "dup_prob",
        "dup_delay_us",
        "q_limit",
        "route_id",
    ),
}

_LIMITS = {"loss_prob": U32_MAX, "dup_prob": U32_MAX}
_UINT = re.compile(r"[0-9]+\Z")


@dataclass(frozen=True)
class TraceEntry:
    """Link characteristics active for ``keep_us`` microseconds."""

    keep_us: int
    delay_us: int = 0
    jitter_us: int = 0
    rate_bps: int = 0
    loss_prob: int = 0
    dup_prob: int = 0
    dup_delay_us: int = 0
    q_limit: int = 0
    route_id: int = 0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or value < 0:
                raise ValueError(f"{f.name} must be a non-negative integer, got {value!r}")
            if value > _LIMITS.get(f.name, U64_MAX):
                raise ValueError(f"{f.name}={value} does not fit its field width")
        if self.keep_us < 1:
            raise ValueError("keep_us must be >= 1")

    @property
    def is_transparent(self) -> bool:
        return not (
            self.delay_us
            or self.jitter_us
            or self.rate_bps
            or self.loss_prob
            or self.dup_prob
            or self.q_limit
            or self.route_id
        )


class Timeline:
    """Ordered trace entries with precomputed start offsets.

    Entry ``i`` is active on ``[starts[i], starts[i] + entries[i].keep_us)``
    relative to the replay start.
    """

    __slots__ = ("_entries", "_starts", "_total")

    def __init__(self, entries=()):
        self._entries = tuple(entries)
        keeps = [e.keep_us for e in self._entries]
        self._starts = tuple([0] + list(accumulate(keeps))[:-1]) if keeps else ()
        self._total = sum(keeps)

    @property
    def entries(self) -> tuple[TraceEntry, ...]:
        return self._entries

    @property
    def cumulative_starts_us(self) -> tuple[int, ...]:
        return self._starts

    @property
    def total_duration_us(self) -> int:
        return self._total

    def __len__(self):
        return len(self._entries)

    def __getitem__(self, index) -> TraceEntry:
        return self._entries[index]

    def __iter__(self):
        return iter(self._entries)

    def __eq__(self, other):
        if not isinstance(other, Timeline):
            return NotImplemented
        return self._entries == other._entries

    def __repr__(self):
        return f"Timeline({len(self._entries)} entries, {self._total} us)"

    def concat(self, entries) -> "Timeline":
        return Timeline(self._entries + tuple(entries))


def _split(line: str) -> list[str]:
    return [cell.strip() for cell in line.split(",")]


def _parse_header(cells, fmt: TraceFormat, lineno: int):
    names = [c.lower() for c in cells]
    expected = fmt.columns
    for name in names:
        if name not in expected:
            raise UnknownColumn(f"unknown column {name!r} for {fmt.value} format", lineno)
    if len(names) != len(expected):
        raise WrongColumnCount(
            f"{fmt.value} header needs {len(expected)} columns, got {len(names)}", lineno
        )
    if tuple(names) != expected:
        raise UnknownColumn(
            f"columns must be in order: {', '.join(expected)}", lineno
        )


def _parse_row(cells, fmt: TraceFormat, lineno: int) -> TraceEntry:
    columns = fmt.columns
    if len(cells) != len(columns):
        raise WrongColumnCount(f"expected {len(columns)} fields, got {len(cells)}", lineno)
    values = {}
    for name, cell in zip(columns, cells):
        if not _UINT.match(cell):
            raise NonNumericField(f"{name}: {cell!r} is not an unsigned decimal integer", lineno)
        value = int(cell)
        limit = _LIMITS.get(name, U64_MAX)
        if value > limit:
            raise ValueOverflow(f"{name}: {value} exceeds {limit}", lineno)
        values[name] = value
    if values["keep_us"] == 0:
        raise ZeroKeepUs("keep_us must be ≥ 1", lineno)
    return TraceEntry(**values)


def iter_entries(text: str, fmt, *, first_line: int = 1):
    """Yield the entries of ``text``; raises a ParseError on the first bad line."""
    fmt = TraceFormat.parse(fmt)
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=first_line):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = _split(line)
        if not header_seen:
            if all(_UINT.match(c) for c in cells):
                raise MissingHeader("expected a header line before the first row", lineno)
            _parse_header(cells, fmt, lineno)
            header_seen = True
            continue
        yield _parse_row(cells, fmt, lineno)
    if not header_seen:
        raise MissingHeader("document has no header line")


def parse_trace(text: str, fmt="SIMPLE") -> Timeline:
    """Parse a Trace File document into a :class:`Timeline`."""
    return Timeline(iter_entries(text, fmt))


def append_trace(timeline: Timeline, text: str, fmt="SIMPLE") -> Timeline:
    """Return ``timeline`` followed by the entries parsed from ``text``.

    A document consisting only of whitespace appends nothing.
    """
    if not text.strip():
        return timeline
    return timeline.concat(iter_entries(text, fmt))


def load_trace(path, fmt="SIMPLE") -> Timeline:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_trace(fh.read(), fmt)


def format_trace(timeline: Timeline, fmt="SIMPLE") -> str:
    """Serialize a timeline; ``parse_trace(format_trace(t, f), f) == t``."""
    fmt = TraceFormat.parse(fmt)
    columns = fmt.columns
    dropped = set(_COLUMNS[TraceFormat.EXTENDED]) - set(columns)
    lines = [", ".join(columns)]
    for entry in timeline:
        if any(getattr(entry, name) for name in dropped):
            raise ValueError(f"entry {entry} has fields not representable in {fmt.value}")
        lines.append(", ".join(str(getattr(entry, name)) for name in columns))
    return "\n".join(lines) + "\n"


def entry_at_offset(timeline: Timeline, offset_us: int):
    """Index of the entry active at ``offset_us``, or ``None`` past the end.

    Same answer as walking the list from the start; uses the prefix sums.
    """
    if not len(timeline):
        raise EmptyTimeline("timeline has no entries")
    if offset_us < 0:
        raise ValueError("offset_us must be non-negative")
    if offset_us >= timeline.total_duration_us:
        return None
    return bisect.bisect_right(timeline.cumulative_starts_us, offset_us) - 1
