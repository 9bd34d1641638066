"""Deterministic random streams shared by the pure and compiled kernels.

A trial draws from several independent substreams (channel, harvesting,
decoding) so that common-random-number comparisons across schemes face the
same environment.  The generator is splitmix64: trivially portable, so the
compiled kernel can reproduce the exact same sequence bit for bit.
"""

from __future__ import annotations

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15

# Substream tags. Keep in sync with _ckernel.pyx.
STREAM_CHANNEL = 1
STREAM_HARVEST = 2
STREAM_DECODE = 3


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


def substream_state(seed: int, tag: int) -> int:
    """Initial splitmix64 state for substream `tag` of a trial seed."""
    return _mix((seed & MASK64) ^ (tag * GOLDEN & MASK64))


class SplitMix64:
    """Minimal counter-based generator; uniform() yields 53-bit doubles."""

    __slots__ = ("state",)

    def __init__(self, seed: int, tag: int = 0):
        self.state = substream_state(seed, tag)

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return _mix(self.state)

    def uniform(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0 ** -53
