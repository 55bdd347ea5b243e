"""Seeded random streams.

Every stream is a PCG64 generator keyed by a ``numpy.random.SeedSequence``
built from an integer seed plus any number of integer keys, so a sub-stream
(e.g. trial 3, chunk 7) is addressed by its keys and never depends on how
work is split up. Gaussian variates come from Box-Muller on the PCG64
uniform stream rather than numpy's ziggurat sampler.
"""

import numpy as np

MASK64 = (1 << 64) - 1


def generator(seed, *keys):
    """Return a PCG64-backed Generator for ``(seed, *keys)``."""
    entropy = [int(seed) & MASK64] + [int(k) & MASK64 for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def normal(rng, shape):
    """Standard normal array of ``shape`` via Box-Muller.

    Uniforms are consumed in pairs; an odd total drops the last sine draw.
    """
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    total = int(np.prod(shape, dtype=np.int64))
    pairs = (total + 1) // 2
    u = rng.random((2, pairs))
    # 1 - u lies in (0, 1], so the log is finite
    radius = np.sqrt(-2.0 * np.log1p(-u[0]))
    angle = 2.0 * np.pi * u[1]
    out = np.empty(2 * pairs)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:total].reshape(shape)


def row_streams(seed, keys, ids):
    """One generator per row id, so per-sample randomness survives re-batching."""
    return [generator(seed, *keys, i) for i in ids]


def derive_seed(seed, *keys):
    """Integer seed for a keyed sub-task (e.g. trial index, chunk index)."""
    entropy = [int(seed) & MASK64] + [int(k) & MASK64 for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])
