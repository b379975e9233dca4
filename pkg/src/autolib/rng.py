"""Deterministic noise source for the simulator.

One splitmix64 generator, named in the layout/scenario config, drives all
sensor noise. splitmix64 is a tiny, well-known 64-bit mixer that is easy
to reproduce bit-for-bit in any language, which keeps noise-free traces
comparable across implementations and noisy traces reproducible here.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1


class SplitMix64:
    """splitmix64: x += 0x9E3779B97F4A7C15; mix with xor-shift-multiply."""

    name = "splitmix64"

    def __init__(self, seed: int):
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return (z ^ (z >> 31)) & MASK64

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) / float(1 << 53)

    def chance(self, probability: float) -> bool:
        if probability <= 0.0:
            return False
        return self.uniform() < probability

    def jitter(self, spread: float) -> float:
        """Multiplicative factor in [1 - spread, 1 + spread]."""
        return 1.0 + (self.uniform() * 2.0 - 1.0) * spread


def make_rng(name: str, seed: int) -> SplitMix64:
    if name != SplitMix64.name:
        raise ValueError(f"unknown rng {name!r}; only {SplitMix64.name!r} is supported")
    return SplitMix64(seed)
