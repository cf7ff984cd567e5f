"""Counter-based uniform variates.

Every draw is a pure function of ``(seed, stream, counter)``, so a trajectory
indexed by ``stream`` sees the same numbers no matter how trajectories are
split across workers or in which order they are processed.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM_KEY = np.uint64(0xD1B54A32D192ED03)
_INV_2_53 = 1.0 / 9007199254740992.0


def _mix(z):
    # splitmix64 finalizer; uint64 arithmetic wraps modulo 2**64
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(v):
    return np.asarray(v).astype(np.uint64)


def counter_uniform(seed, stream, counter):
    """Uniform variates on the open interval (0, 1).

    ``stream`` and ``counter`` broadcast against each other; ``seed`` is a
    non-negative integer.
    """
    with np.errstate(over="ignore"):
        key = _mix(np.uint64(seed) * _GOLDEN + _GOLDEN)
        z = _mix(key ^ (_as_u64(stream) * _STREAM_KEY))
        z = _mix(z + (_as_u64(counter) + np.uint64(1)) * _GOLDEN)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53


class CounterStream:
    """Sequential view of one counter stream, usable where a generator is expected."""

    def __init__(self, seed, stream=0, start=0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.counter = int(start)

    def random(self, size=None):
        if size is None:
            u = float(counter_uniform(self.seed, self.stream, self.counter))
            self.counter += 1
            return u
        n = int(np.prod(size))
        u = counter_uniform(self.seed, self.stream, np.arange(self.counter, self.counter + n))
        self.counter += n
        return u.reshape(size)
