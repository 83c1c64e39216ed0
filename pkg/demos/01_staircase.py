"""
Replaying a staircase trace
===========================

Five 10 s entries step the link from 50 Mbps down to 15 Mbps and back,
while the one-way delay climbs from 10 ms to 30 ms.  We offer more
traffic than the link can carry and watch the delivered rate follow
the trace.
"""

from pathlib import Path

from tracelink import load_trace
from tracelink.harness import FloodSpec, LinkSpec, ProbeSpec, Scenario, run_scenario, segment_summary

HERE = Path(__file__).parent
trace = load_trace(HERE / "data" / "staircase.csv")
print(f"{len(trace)} entries, {trace.total_duration_us / 1e6:.1f} s")

# A 60 Mbps flood of 1500-byte packets saturates every step.
flood = run_scenario(Scenario(LinkSpec(timeline=trace),
                              flood=FloodSpec(60_000_000, trace.total_duration_us),
                              window_us=1_000_000))
print(f"simulated 50 s in {flood.wall_time_s:.2f} s of wall time")

# Windows touching an entry boundary straddle two rates; the summary skips them.
for row in segment_summary(flood, trace):
    print(f"entry {row['entry']}: trace {row['rate_bps'] / 1e6:5.1f} Mbps, "
          f"measured {row['mean_bps'] / 1e6:7.3f} Mbps over {row['windows']} windows")

# Probes alone see the configured delay plus one 64-byte serialization.
probes = run_scenario(Scenario(LinkSpec(timeline=trace), probes=ProbeSpec(1_000_000, 50)))
for row in segment_summary(probes, trace, exclude_windows=0):
    print(f"entry {row['entry']}: delay {row['delay_us'] / 1e3:4.0f} ms, "
          f"probe RTT {row['mean_rtt_us'] / 1e3:.3f} ms")

# The same run from the command line:
#   tracelink simulate demos/staircase.yaml -o out/
