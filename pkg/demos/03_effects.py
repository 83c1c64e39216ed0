"""
Loss, duplication and reordering
================================

Random effects are driven by a seeded generator, so every run with the
same seed makes the same decisions.  Probabilities are 32-bit integers:
2**30 is a quarter, 2**32 - 1 means always.
"""

from tracelink import InstanceConfig, Timeline, TraceEntry
from tracelink.harness import FloodSpec, LinkSpec, Scenario, replay_arrivals, run_scenario

arrivals = [(i * 100, 200) for i in range(20_000)]

lossy = Timeline([TraceEntry(keep_us=10**9, delay_us=1000, loss_prob=2**30)])
outcomes, _ = replay_arrivals(InstanceConfig(rng_seed=7), lossy, arrivals)
print(f"loss_prob = 2**30: {sum(o.dropped for o in outcomes) / len(outcomes):.2%} lost")

# Duplicates trail their original by dup_delay_us and queue like any packet.
dupes = Timeline([TraceEntry(keep_us=10**9, delay_us=1000, dup_prob=2**31, dup_delay_us=500)])
outcomes, departures = replay_arrivals(InstanceConfig(rng_seed=7), dupes, arrivals)
extra = sum(len(o.accepted) - 1 for o in outcomes)
print(f"dup_prob = 2**31: {extra} duplicates for {len(arrivals)} packets")


def inversions(route_id):
    # The delay drops from 30 ms to 10 ms half way through; packets sent
    # just after the drop overtake those still in flight.
    trace = Timeline([
        TraceEntry(keep_us=500_000, delay_us=30_000, rate_bps=100_000_000, route_id=route_id),
        TraceEntry(keep_us=500_000, delay_us=10_000, rate_bps=100_000_000, route_id=route_id),
    ])
    m = run_scenario(Scenario(LinkSpec(timeline=trace), flood=FloodSpec(10_000_000, 1_000_000),
                              record_deliveries=True))
    order = [d[1] for d in sorted(m.deliveries, key=lambda d: (d[3], d[1]))]
    return sum(b < a for a, b in zip(order, order[1:]))


print(f"route 0 (reordering allowed): {inversions(0)} inversions")
print(f"route 7 (strictly ordered):   {inversions(7)} inversions")
