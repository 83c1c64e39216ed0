"""Seeded pseudo-random source for the stochastic link effects.

The generator is numpy's PCG64 (PCG XSL RR 128/64) seeded through
``numpy.random.PCG64(seed)``.  Raw 64-bit outputs are pulled in blocks;
the block size does not change the stream, so results depend only on
the seed and the order of draws.

Loss and duplication decisions use the top 32 bits of one raw output.
Jitter uses exactly two raw outputs per sample (Box-Muller, cosine
branch), so the number of draws per packet never depends on the values
drawn.
"""

from __future__ import annotations

import math

import numpy as np

U32_MAX = 2**32 - 1
_BLOCK = 4096
_INV53 = 1.0 / (1 << 53)
_TWO_PI = 2.0 * math.pi


def triggers(scaled_prob: int, draw: int) -> bool:
    """Bernoulli decision for a probability scaled to 32 bits.

    ``U32_MAX`` always triggers, 0 never does.
    """
    return scaled_prob == U32_MAX or draw < scaled_prob


class EffectRng:
    """Deterministic source of loss, duplication and jitter draws."""

    def __init__(self, seed: int = 0):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self._bitgen = np.random.PCG64(seed)
        self._buf: list[int] = []
        self._pos = 0
        self.counts = {"loss": 0, "duplication": 0, "jitter": 0}

    def _raw(self) -> int:
        if self._pos == len(self._buf):
            self._buf = self._bitgen.random_raw(_BLOCK).tolist()
            self._pos = 0
        value = self._buf[self._pos]
        self._pos += 1
        return value

    def draw_u32(self, purpose: str = "loss") -> int:
        """Uniform integer on [0, 2**32)."""
        self.counts[purpose] += 1
        return self._raw() >> 32

    def standard_normal(self) -> float:
        u1 = ((self._raw() >> 11) + 1) * _INV53  # (0, 1]
        u2 = (self._raw() >> 11) * _INV53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)

    def sample_jitter(self, delay_us: int, jitter_us: int) -> int:
        """Delay with normal jitter of std ``jitter_us``, rounded to 1 µs and clamped at 0.

        Zero jitter returns ``delay_us`` without consuming any draw.
        """
        if jitter_us == 0:
            return delay_us
        self.counts["jitter"] += 1
        d = delay_us + math.floor(jitter_us * self.standard_normal() + 0.5)
        return d if d > 0 else 0
