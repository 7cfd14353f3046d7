"""Seeded random streams.

All randomness goes through numpy's PCG64 bit generator, which yields the same
sequence for a given seed on every platform. Parameter initialisation uses a
stream derived from ``(seed, crc32(name))`` so a parameter's initial value does
not depend on which other parameters exist.
"""

import zlib

import numpy as np

ALGORITHM = "PCG64"


class Rng:
    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, label: str) -> "Rng":
        """Independent stream keyed by a label; does not advance this stream."""
        return derive(self.seed, label)

    # thin pass-throughs used across the package
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def random(self, size=None):
        return self.gen.random(size)

    def beta(self, a, b, size=None):
        return self.gen.beta(a, b, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self.gen.choice(a, size=size, replace=replace, p=p)


def derive(seed: int, label: str) -> Rng:
    r = Rng.__new__(Rng)
    r.seed = int(seed)
    r.gen = np.random.Generator(np.random.PCG64([int(seed), zlib.crc32(label.encode("utf-8"))]))
    return r
