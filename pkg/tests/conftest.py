import pytest

from tracelink import InstanceConfig, Instance, SyncRegistry, Timeline, TraceEntry, parse_trace

# Published SIMPLE example: five 10 s entries.
STAIRCASE = """\
keep_us,  delay_us, rate_bps, loss_prob, q_limit
10000000, 10000,    50000000, 0,        300
10000000, 20000,    25000000, 0,        300
10000000, 30000,    15000000, 0,        300
10000000, 20000,    25000000, 0,        300
10000000, 10000,    50000000, 0,        300
"""

U32_MAX = 2**32 - 1


@pytest.fixture
def staircase_text():
    return STAIRCASE


@pytest.fixture
def staircase():
    return parse_trace(STAIRCASE, "SIMPLE")


@pytest.fixture
def registry():
    return SyncRegistry()


def make_instance(entries, registry=None, start_us=None, name="inst", **config):
    """Instance with ``entries`` loaded; started at ``start_us`` when given."""
    inst = Instance(InstanceConfig(**config), name=name,
                    registry=registry if registry is not None else SyncRegistry())
    if entries:
        inst.load_timeline(entries if isinstance(entries, Timeline) else Timeline(entries))
    if start_us is not None:
        inst.set_stage("RUN", start_us)
    return inst


def drain(inst):
    """Release everything left in the queue, in departure order."""
    out = []
    while True:
        t = inst.next_event_time()
        if t is None:
            return out
        out.append(inst.dequeue(t))


def entry(keep=1_000_000, **kw):
    return TraceEntry(keep_us=keep, **kw)


# -- acceptance reporting ------------------------------------------------

_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """``verdict(n, title, ok, detail)``: record a criterion line and assert ``ok``.

    ``ok=None`` records a skip without failing.
    """
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, title, ok, detail):
        word = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {number:>2} {word}  {title}: {detail}"
        lines.append(line)
        print(line)
        if ok is not None:
            assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
