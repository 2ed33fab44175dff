"""SplitMix64, the pseudo-random source for generated corpora and splits.

The algorithm and every derived draw are fixed here so a corpus can be
regenerated bit-for-bit by any implementation:

* ``next_u64``: ``state += 0x9E3779B97F4A7C15``; then
  ``z = state; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
  z = (z ^ z>>27) * 0x94D049BB133111EB; return z ^ z>>31`` (all mod 2**64).
* ``random``: ``(next_u64() >> 11) * 2**-53``.
* ``below(n)``: draw ``x = next_u64()`` until ``x < 2**64 - (2**64 % n)``,
  return ``x % n``.
* ``shuffle``: Fisher-Yates from the last index down, ``j = below(i + 1)``.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def next_u32(self) -> int:
        return self.next_u64() >> 32

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def choice(self, seq):
        return seq[self.below(len(seq))]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def weighted_index(self, probs) -> int:
        u = self.random()
        acc = 0.0
        for i, p in enumerate(probs):
            acc += p
            if u < acc:
                return i
        # rounding slack: fall back to the last positive entry
        for i in range(len(probs) - 1, -1, -1):
            if probs[i] > 0:
                return i
        raise ValueError("no positive probability")
