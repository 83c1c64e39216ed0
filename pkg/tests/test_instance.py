import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracelink import (
    IllegalTransition,
    Instance,
    InstanceConfig,
    NotReady,
    Stage,
    Timeline,
    TraceEntry,
    WrongStage,
)

from .conftest import STAIRCASE, U32_MAX, drain, entry, make_instance
from .oracles import active_entry_linear


# -- stages -------------------------------------------------------------


def test_fresh_instance_stats():
    s = Instance(InstanceConfig()).stats()
    assert s.stage == "LOAD"
    assert all(v == 0 for v in s.counters.values())
    assert s.replay_start_us is None


def test_load_to_arm(staircase):
    inst = make_instance(staircase)
    assert inst.set_stage("ARM") is Stage.ARM


def test_run_with_empty_timeline_not_ready():
    inst = make_instance([])
    with pytest.raises(NotReady):
        inst.set_stage("RUN")
    with pytest.raises(NotReady):
        inst.set_stage("ARM")
    assert inst.stage is Stage.LOAD


def test_finish_then_clear_resets(staircase):
    inst = make_instance(staircase, start_us=0, continue_mode="HOLD")
    inst.enqueue(100, 0)
    inst.advance_cursor(60_000_000)
    assert inst.stage is Stage.FINISH
    assert inst.set_stage("CLEAR") is Stage.LOAD
    assert len(inst.timeline) == 0
    s = inst.stats()
    assert all(v == 0 for v in s.counters.values())
    assert s.replay_start_us is None


def test_manual_load_keeps_timeline_and_allows_append(staircase):
    inst = make_instance(staircase, start_us=0)
    with pytest.raises(WrongStage):
        inst.ingest(STAIRCASE)
    inst.set_stage("LOAD", 5)
    assert inst.replay_start_us is None
    assert inst.ingest(STAIRCASE) == 10


@pytest.mark.parametrize("src, dst", [
    ("LOAD", "FINISH"), ("ARM", "CLEAR"), ("ARM", "FINISH"), ("RUN", "ARM"),
    ("RUN", "CLEAR"), ("RUN", "FINISH"), ("FINISH", "RUN"), ("FINISH", "ARM"),
])
def test_illegal_transitions(staircase, src, dst):
    inst = make_instance(staircase, continue_mode="HOLD")
    if src == "ARM":
        inst.set_stage("ARM")
    elif src in ("RUN", "FINISH"):
        inst.set_stage("RUN", 0)
        if src == "FINISH":
            inst.advance_cursor(10**9)
    assert inst.stage.name == src
    with pytest.raises(IllegalTransition):
        inst.set_stage(dst, 1)
    assert inst.stage.name == src


def test_arm_to_load_clears_start(staircase):
    inst = make_instance(staircase)
    inst.set_stage("ARM")
    inst.set_stage("LOAD")
    assert inst.stage is Stage.LOAD and inst.replay_start_us is None


def test_arm_first_packet_starts_and_is_emulated(staircase):
    inst = make_instance(staircase)
    inst.set_stage("ARM")
    out = inst.enqueue(1500, 777)
    assert inst.stage is Stage.RUN and inst.replay_start_us == 777
    assert out.accepted[0].deadline_us == 777 + 10_000
    assert out.accepted[0].tx_duration_us == 240


LEGAL = {
    ("LOAD", "ARM"), ("LOAD", "RUN"), ("LOAD", "LOAD"), ("ARM", "RUN"), ("ARM", "LOAD"),
    ("RUN", "FINISH"), ("RUN", "LOAD"), ("FINISH", "LOAD"), ("ARM", "ARM"), ("RUN", "RUN"),
}

commands = st.lists(
    st.one_of(
        st.tuples(st.just("stage"), st.sampled_from(list(Stage))),
        st.tuples(st.just("packet"), st.integers(0, 3_000)),
        st.tuples(st.just("ingest"), st.integers(1, 3)),
    ),
    max_size=40,
)


@settings(max_examples=150, deadline=None)
@given(commands, st.sampled_from(["HOLD", "CLEAN", "LOOP"]))
def test_stage_machine_only_legal_transitions(cmds, mode):
    inst = make_instance([], continue_mode=mode)
    now = 0
    for kind, arg in cmds:
        before = inst.stage
        if kind == "stage":
            try:
                inst.set_stage(arg, now)
            except (IllegalTransition, NotReady):
                assert inst.stage is before
                continue
            if arg is Stage.CLEAR:
                assert inst.stage is Stage.LOAD and len(inst.timeline) == 0
                continue
        elif kind == "packet":
            now += arg
            inst.enqueue(100, now)
        else:
            try:
                inst.ingest("keep_us,delay_us,rate_bps,loss_prob,q_limit\n"
                            + f"{arg * 500},1,0,0,0\n")
            except WrongStage:
                assert before is not Stage.LOAD
        after = inst.stage
        if after is not before:
            assert (before.name, after.name) in LEGAL
        assert (inst.replay_start_us is not None) == (after in (Stage.RUN, Stage.FINISH))


# -- cursor -------------------------------------------------------------


def test_loop_offset_folds(staircase):
    inst = make_instance(staircase, start_us=0, continue_mode="LOOP")
    assert inst.advance_cursor(73_000_000) is staircase[2]
    assert inst.active_index == 2 and inst.stage is Stage.RUN
    ref = make_instance(staircase, start_us=0, continue_mode="LOOP")
    assert ref.advance_cursor(23_000_000) is staircase[2]


def test_hold_keeps_last(staircase):
    inst = make_instance(staircase, start_us=0, continue_mode="HOLD")
    assert inst.advance_cursor(51_000_000) is staircase[4]
    assert inst.stage is Stage.FINISH
    out = inst.enqueue(1500, 52_000_000)
    assert out.accepted[0].deadline_us == 52_000_000 + 10_000
    assert out.accepted[0].tx_duration_us == 240


def test_clean_goes_transparent(staircase):
    inst = make_instance(staircase, start_us=0, continue_mode="CLEAN")
    assert inst.advance_cursor(51_000_000) is None
    assert inst.stage is Stage.FINISH
    p = inst.enqueue(1500, 52_000_000).accepted[0]
    assert (p.deadline_us, p.tx_duration_us) == (52_000_000, 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=8),
       st.lists(st.integers(0, 400), min_size=1, max_size=30))
def test_loop_periodicity_with_monotone_walk(keeps, steps):
    entries = [TraceEntry(keep_us=k, delay_us=i) for i, k in enumerate(keeps)]
    inst = make_instance(entries, start_us=1000, continue_mode="LOOP")
    total = sum(keeps)
    t = 1000
    for step in steps:
        t += step
        got = inst.advance_cursor(t)
        assert got is entries[active_entry_linear(entries, (t - 1000) % total)]


def test_cursor_skips_with_long_gaps():
    entries = [entry(keep=10, delay_us=i) for i in range(1000)]
    inst = make_instance(entries, start_us=0)
    assert inst.advance_cursor(5) is entries[0]
    assert inst.advance_cursor(5_555) is entries[555]
    assert inst.advance_cursor(5_565) is entries[556]


def test_stats_at_offset(staircase):
    inst = make_instance(staircase, start_us=0)
    s = inst.stats(25_000_000)
    assert s.active_index == 2
    assert s.active_entry["rate_bps"] == 15_000_000
    assert inst.active_index == 0  # read-only


# -- enqueue pipeline ---------------------------------------------------


def test_delay_and_rate():
    inst = make_instance([entry(delay_us=10_000, rate_bps=50_000_000)], start_us=0)
    out = inst.enqueue(1500, 1000)
    assert len(out.accepted) == 1 and not out.drops
    p = out.accepted[0]
    assert (p.deadline_us, p.tx_duration_us, p.wire_size_bytes) == (11_000, 240, 1500)


def test_tx_duration_rounds_up():
    inst = make_instance([entry(rate_bps=50_000_000)], start_us=0)
    assert inst.enqueue(64, 0).accepted[0].tx_duration_us == 11  # 10.24 us


def test_overhead_counts_on_wire():
    inst = make_instance([entry(rate_bps=8_000_000)], start_us=0, overhead_bytes=8)
    p = inst.enqueue(992, 0).accepted[0]
    assert p.wire_size_bytes == 1000 and p.tx_duration_us == 1000


def test_full_loss_drops_everything():
    inst = make_instance([entry(loss_prob=U32_MAX)], start_us=0)
    outs = [inst.enqueue(100, t) for t in range(1000)]
    assert all(o.dropped and o.drops == ["loss"] for o in outs)
    assert inst.counters.dropped_loss == 1000
    assert inst.queue.size_packets == 0


def test_zero_entry_is_transparent():
    inst = make_instance([entry()], start_us=0)
    for t in (0, 5, 99):
        p = inst.enqueue(1500, t).accepted[0]
        assert (p.deadline_us, p.tx_duration_us) == (t, 0)
    assert [d.delivery_us for d in drain(inst)] == [0, 5, 99]


@given(st.lists(st.tuples(st.integers(0, 10**6), st.integers(1, 9000)), max_size=40),
       st.sampled_from(["LOAD", "CLEAN", "ZERO"]))
def test_transparency_property(packets, mode):
    if mode == "LOAD":
        inst = make_instance([entry(delay_us=5, rate_bps=1)])
    elif mode == "CLEAN":
        inst = make_instance([entry(keep=1, delay_us=5, rate_bps=1)], start_us=0,
                             continue_mode="CLEAN")
        inst.advance_cursor(2)
    else:
        inst = make_instance([entry(keep=10**9)], start_us=0)
    t = 10
    for gap, size in packets:
        t += gap
        for p in inst.enqueue(size, t).accepted:
            assert p.deadline_us == t and p.tx_duration_us == 0


def test_segmentation():
    inst = make_instance([entry(rate_bps=12_000_000)], start_us=0, segment_size_bytes=1500)
    out = inst.enqueue(4000, 0)
    assert [p.wire_size_bytes for p in out.accepted] == [1500, 1500, 1000]
    assert [p.tx_duration_us for p in out.accepted] == [1000, 1000, 667]
    assert [p.segment_index for p in out.accepted] == [0, 1, 2]
    assert sum(p.wire_size_bytes for p in out.accepted) == 4000
    assert inst.counters.segmented == 2
    assert inst.rng.counts["loss"] == 0  # loss_prob 0 consumes no draws


def test_segments_draw_loss_independently():
    half = 2**31
    inst = make_instance([entry(loss_prob=half)], start_us=0, segment_size_bytes=1500, rng_seed=1)
    inst.enqueue(4000, 0)
    assert inst.rng.counts["loss"] == 3


def test_small_packet_not_segmented():
    inst = make_instance([entry()], start_us=0, segment_size_bytes=1500)
    assert len(inst.enqueue(1500, 0).accepted) == 1
    assert inst.counters.segmented == 0


def test_packet_queue_limit():
    inst = make_instance([entry(delay_us=1000, q_limit=3)], start_us=0)
    outs = [inst.enqueue(100, t) for t in range(5)]
    assert [o.dropped for o in outs] == [False, False, False, True, True]
    assert inst.counters.dropped_queue == 2
    drain(inst)
    assert not inst.enqueue(100, 2000).dropped


def test_byte_queue_limit_uses_wire_size():
    inst = make_instance([entry(delay_us=1000, q_limit=3000)], start_us=0,
                         queue_limit_unit="BYTES", overhead_bytes=100)
    assert not inst.enqueue(1400, 0).dropped  # 1500 on the wire
    assert not inst.enqueue(1400, 1).dropped  # 3000
    assert inst.enqueue(1, 2).dropped  # 3101 > 3000
    assert inst.queue.size_bytes == 3000


def test_route_ordering_overrides_shorter_delay():
    tl = [entry(keep=1000, delay_us=500, route_id=4), entry(keep=1000, delay_us=10, route_id=4)]
    inst = make_instance(tl, start_us=0)
    a = inst.enqueue(100, 900).accepted[0]
    b = inst.enqueue(100, 1000).accepted[0]
    assert a.deadline_us == 1400
    assert b.deadline_us == 1400  # would be 1010 without ordering
    assert [d.packet.seq for d in drain(inst)] == [a.seq, b.seq]


def test_route_zero_reorders():
    tl = [entry(keep=1000, delay_us=500), entry(keep=1000, delay_us=10)]
    inst = make_instance(tl, start_us=0)
    a = inst.enqueue(100, 900).accepted[0]
    b = inst.enqueue(100, 1000).accepted[0]
    assert [d.packet.seq for d in drain(inst)] == [b.seq, a.seq]


def test_route_state_survives_entry_change_and_loop():
    tl = [entry(keep=100, delay_us=1000, route_id=1), entry(keep=100, delay_us=0, route_id=1)]
    inst = make_instance(tl, start_us=0, continue_mode="LOOP")
    inst.enqueue(10, 50)  # deadline 1050
    assert inst.enqueue(10, 150).accepted[0].deadline_us == 1050
    assert inst.enqueue(10, 250).accepted[0].deadline_us == 1250  # wrapped, entry 0


def test_dropped_packet_does_not_advance_route_clock():
    tl = [entry(keep=1000, delay_us=100, route_id=2, q_limit=1)]
    inst = make_instance(tl, start_us=0)
    assert inst.enqueue(10, 0).accepted[0].deadline_us == 100
    assert inst.enqueue(10, 50).dropped
    assert inst.queue.last_deadline_by_route[2] == 100


def test_duplicate_always():
    inst = make_instance([entry(delay_us=100, dup_prob=U32_MAX, dup_delay_us=1000,
                                rate_bps=8_000_000)], start_us=0)
    out = inst.enqueue(1000, 0)
    orig, dup = out.accepted
    assert not orig.duplicate and dup.duplicate
    assert dup.deadline_us == orig.deadline_us + 1000
    assert dup.tx_duration_us == orig.tx_duration_us == 1000
    assert inst.counters.duplicated == 1


def test_duplicate_subject_to_queue_limit():
    inst = make_instance([entry(delay_us=100, dup_prob=U32_MAX, q_limit=1)], start_us=0)
    out = inst.enqueue(100, 0)
    assert len(out.accepted) == 1 and out.drops == ["queue-duplicate"]


def test_duplicate_with_route_ordering():
    inst = make_instance([entry(delay_us=100, dup_prob=U32_MAX, dup_delay_us=50, route_id=1)],
                         start_us=0)
    a = inst.enqueue(10, 0).accepted
    b = inst.enqueue(10, 1).accepted
    assert [p.deadline_us for p in a] == [100, 150]
    assert [p.deadline_us for p in b] == [150, 200]


def test_entry_pinning(staircase):
    inst = make_instance(staircase, start_us=0)
    early = inst.enqueue(1500, 9_999_000).accepted[0]
    fixed = (early.deadline_us, early.tx_duration_us)
    inst.enqueue(1500, 10_000_001)
    assert (early.deadline_us, early.tx_duration_us) == fixed == (10_009_000, 240)


def test_counters_bookkeeping():
    inst = make_instance([entry(keep=10, loss_prob=U32_MAX), entry(keep=10**6)], start_us=0)
    for t in range(2):
        inst.enqueue(100, t)
    for t in range(10, 20):
        inst.enqueue(100, t)
    drain(inst)
    c = inst.stats().counters
    assert c["delivered"] == 10 and c["dropped_loss"] == 2 and c["received"] == 12


def _outcomes(seed, jitter=300):
    tl = [TraceEntry(keep_us=2000, delay_us=1000, jitter_us=jitter, rate_bps=10_000_000,
                     loss_prob=2**30, dup_prob=2**29, dup_delay_us=100, q_limit=20),
          TraceEntry(keep_us=3000, delay_us=200, jitter_us=jitter, rate_bps=5_000_000,
                     loss_prob=2**31, route_id=3, q_limit=10)]
    inst = make_instance(tl, start_us=0, continue_mode="LOOP", rng_seed=seed)
    log = []
    for t in range(0, 20_000, 37):
        while (nxt := inst.next_event_time()) is not None and nxt <= t:
            d = inst.dequeue(nxt)
            log.append(("dep", d.packet.seq, d.start_us, d.delivery_us))
        o = inst.enqueue(700, t)
        log.append(("enq", [(p.seq, p.deadline_us, p.duplicate) for p in o.accepted], o.drops))
    log.extend(("dep", d.packet.seq, d.start_us, d.delivery_us) for d in drain(inst))
    return log


def test_determinism():
    assert _outcomes(42) == _outcomes(42)
    assert _outcomes(42) != _outcomes(43)


def test_config_validation():
    with pytest.raises(ValueError):
        InstanceConfig(segment_size_bytes=10)
    with pytest.raises(ValueError):
        InstanceConfig(continue_mode="FOREVER")
    assert InstanceConfig(continue_mode="loop").continue_mode.name == "LOOP"


def test_loss_ratio_within_four_sigma():
    p = 2**30
    inst = make_instance([entry(keep=10**9, loss_prob=p)], start_us=0, rng_seed=9)
    n = 100_000
    for t in range(n):
        inst.enqueue(10, t)
        inst.dequeue(t)
    frac = inst.counters.dropped_loss / n
    q = p / 2**32
    assert abs(frac - q) <= 4 * (q * (1 - q) / n) ** 0.5
