"""
Starting both directions together
=================================

A forward and a return instance share a sync group.  Both are armed;
whichever sees the first packet starts the replay for the pair, so the
two timelines stay aligned.  A group with an unloaded member refuses to
start at all.
"""

from tracelink import Instance, InstanceConfig, NotReady, SyncRegistry, Timeline, TraceEntry

registry = SyncRegistry()
cfg = InstanceConfig(syncgroup_id=1)
trace = Timeline([TraceEntry(keep_us=5_000_000, delay_us=20_000),
                  TraceEntry(keep_us=5_000_000, delay_us=40_000)])

forward = Instance(cfg, name="forward", registry=registry)
back = Instance(cfg, name="return", registry=registry)
for inst in (forward, back):
    inst.load_timeline(trace)
    inst.set_stage("ARM")

back.enqueue(64, arrival_us=1_234)  # the first packet happens to travel backwards
for inst in (forward, back):
    s = inst.stats()
    print(f"{s.name:8} stage {s.stage}, replay started at {s.replay_start_us} us")

lonely = SyncRegistry()
ready = Instance(cfg, name="ready", registry=lonely)
ready.load_timeline(trace)
ready.set_stage("ARM")
Instance(cfg, name="empty", registry=lonely)
try:
    lonely.trigger_start(1, now_us=0)
except NotReady as exc:
    print(f"refused: {exc}; 'ready' is still {ready.stage.name}")
