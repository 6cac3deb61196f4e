"""Deterministic SplitMix64 random streams.

Every source of randomness in the package draws from a `Stream` keyed by
(seed, concern label, ...), so reseeding one concern (say, augmentation)
never perturbs another (say, weight init). Streams are counter-based:
draws are pure functions of (key, draw index), which makes generation
order-stable and vectorizable.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64_MASK = 0xFFFFFFFFFFFFFFFF


def _mix(z):
    # SplitMix64 finalizer; z is a uint64 scalar or array. Wrapping is the
    # point, so silence numpy's scalar overflow warning.
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64_MASK
    return h


class Stream:
    """One independent random stream, identified by a seed and key parts."""

    def __init__(self, seed, *key_parts):
        state = np.uint64(int(seed) & _U64_MASK)
        with np.errstate(over="ignore"):
            for part in key_parts:
                h = np.uint64(_fnv1a(str(part).encode("utf-8")))
                state = _mix(state + _GOLDEN + h)
        self._base = state
        self._count = 0

    def u64(self, n):
        """Next n raw 64-bit draws as a uint64 array."""
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            return _mix(self._base + _GOLDEN * idx)

    def uniform(self, size=None, low=0.0, high=1.0):
        """Uniform floats in [low, high); scalar when size is None."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.u64(n) >> np.uint64(11)) * 2.0**-53
        out = low + (high - low) * u
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def normal(self, size=None):
        """Standard normal draws via Box-Muller; scalar when size is None."""
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        # u1 in (0, 1] so log is finite; u2 in [0, 1).
        u1 = ((self.u64(m) >> np.uint64(11)) + np.uint64(1)) * 2.0**-53
        u2 = (self.u64(m) >> np.uint64(11)) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def randint(self, bound, size=None):
        """Integers uniform in [0, bound). Exact when bound divides 2**64."""
        n = 1 if size is None else int(np.prod(size))
        out = (self.u64(n) % np.uint64(bound)).astype(np.int64)
        if size is None:
            return int(out[0])
        return out.reshape(size)

    def permutation(self, n):
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def shuffle(self, items):
        """Return a new list with items in shuffled order."""
        return [items[i] for i in self.permutation(len(items))]
