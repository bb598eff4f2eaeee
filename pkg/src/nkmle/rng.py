"""Counter-based random numbers for dataset generation.

Every uniform is a pure function of (seed, trajectory, step, draw) via a
chain of SplitMix64 finalizers, and normals come from Box-Muller on pairs of
those uniforms. No generator state is carried between trajectories, so the
bytes of a dataset do not depend on generation order or thread count.

Training-time randomness (weight init, shuffles, dropout) uses numpy's
``default_rng`` seeded from :func:`derive_seed`; only the data path needs the
stronger guarantee.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

STREAM_STATE = 0
STREAM_MEASUREMENT = 1


def splitmix64(x: ArrayLike) -> NDArray[np.uint64]:
    z = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _u64(v: int) -> NDArray[np.uint64]:
    return np.asarray(int(v) & _MASK64, dtype=np.uint64)


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed: a 63-bit value hashed from ``seed`` and integer keys."""
    h = splitmix64(_u64(seed))
    for k in keys:
        h = splitmix64(h ^ _u64(k))
    return int(h) >> 1


def uniforms(seed: int, traj: int, steps: ArrayLike, stream: int, n: int) -> NDArray[np.float64]:
    """Uniforms in (0, 1], shape (len(steps), n), keyed by (seed, traj, step, draw).

    The draw index is ``stream * 2**32 + j`` so that process and measurement
    noise never share counters.
    """
    steps = np.asarray(steps, dtype=np.uint64).reshape(-1, 1)
    draws = (np.uint64(stream) << np.uint64(32)) + np.arange(n, dtype=np.uint64).reshape(1, -1)
    h = splitmix64(splitmix64(_u64(seed)) ^ _u64(traj))
    h = splitmix64(h ^ steps)
    h = splitmix64(h ^ draws)
    # top 53 bits -> (0, 1]; the +1 keeps log() away from zero in Box-Muller
    return ((h >> np.uint64(11)).astype(np.float64) + 1.0) * (2.0**-53)


def normals(seed: int, traj: int, steps: ArrayLike, stream: int, n: int) -> NDArray[np.float64]:
    """Standard normals of shape (len(steps), n) by Box-Muller."""
    pairs = (n + 1) // 2
    u = uniforms(seed, traj, steps, stream, 2 * pairs)
    radius = np.sqrt(-2.0 * np.log(u[:, 0::2]))
    angle = 2.0 * np.pi * u[:, 1::2]
    z = np.empty((u.shape[0], 2 * pairs))
    z[:, 0::2] = radius * np.cos(angle)
    z[:, 1::2] = radius * np.sin(angle)
    return z[:, :n]
