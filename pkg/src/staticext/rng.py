"""Portable pseudorandom numbers for reproducible verification directions.

A 64-bit linear congruential generator with Knuth's MMIX constants; the top
53 bits of each state give a double in [0, 1).  Sequences depend only on the
seed, so any implementation with the same constants reproduces them.
"""
from __future__ import annotations

import numpy as np

LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407
LCG_MODULUS = 2**64


class LCG:
    """x_{k+1} = (a x_k + c) mod 2^64."""

    def __init__(self, seed: int = 42):
        self.seed = int(seed)
        self.state = self.seed % LCG_MODULUS

    def next_int(self) -> int:
        self.state = (LCG_MULTIPLIER * self.state + LCG_INCREMENT) % LCG_MODULUS
        return self.state

    def uniform(self, n: int | None = None, low: float = 0.0, high: float = 1.0):
        if n is None:
            return low + (high - low) * (self.next_int() >> 11) / 2.0**53
        return np.array([self.uniform(None, low, high) for _ in range(n)])

    @staticmethod
    def describe() -> dict:
        return {"generator": "lcg64", "multiplier": LCG_MULTIPLIER,
                "increment": LCG_INCREMENT, "modulus": LCG_MODULUS,
                "output": "top 53 bits / 2**53"}
