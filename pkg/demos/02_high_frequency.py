"""
A trace that changes every 10 ms
================================

Satellite links reconfigure constantly.  Here a synthetic trace with
5000 entries of 10 ms each holds the rate for a few seconds at a time
while the delay drifts along a sine wave.  The measured throughput
per 250 ms window should sit on the trace rate except right at a step.
"""

import math
import random

import numpy as np

from tracelink import Timeline, TraceEntry
from tracelink.harness import FloodSpec, LinkSpec, Scenario, run_scenario

rng = random.Random(4)
entries = []
while len(entries) < 5000:
    rate = rng.choice([10, 15, 20, 30, 40, 50]) * 1_000_000
    for _ in range(rng.randint(100, 300)):
        k = len(entries)
        delay = int(15_000 + 10_000 * math.sin(2 * math.pi * k / 170))
        entries.append(TraceEntry(keep_us=10_000, delay_us=delay, rate_bps=rate, q_limit=200))
trace = Timeline(entries[:5000])

window = 250_000
m = run_scenario(Scenario(LinkSpec(timeline=trace), flood=FloodSpec(60_000_000, 50_000_000),
                          window_us=window))

rates = np.array([e.rate_bps for e in trace])
measured = np.array([bps for _, bps in m.throughput])
expected = rates[np.array([start for start, _ in m.throughput]) // 10_000]

# A small q_limit keeps the standing queue short, so the lag behind a
# rate step stays under one window.
steps = np.flatnonzero(np.diff(rates)) + 1
near_step = np.zeros(len(measured), dtype=bool)
for b in np.concatenate([[0], steps * 10_000, [trace.total_duration_us]]):
    k = b // window
    near_step[max(0, k - 1):k + 2] = True

err = np.abs(measured - expected) / expected
print(f"{(~near_step).sum()} steady windows, worst error {err[~near_step].max():.2%}")
print(f"{near_step.sum()} windows near a step, worst error {err[near_step].max():.1%}")
print("first 2 s (Mbps):")
for start, want, got in zip(range(0, 2_000_000, window), expected, measured):
    print(f"  {start / 1e6:5.2f} s  trace {want / 1e6:5.1f}  measured {got / 1e6:6.2f}")
