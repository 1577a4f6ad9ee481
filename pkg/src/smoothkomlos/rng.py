"""Seeded random streams.

Every random draw in the package goes through a ``numpy.random.Generator``
backed by PCG64 and seeded from a ``SeedSequence``. Gaussians come from the
generator's ziggurat sampler. Child streams are addressed by integer keys
(batch index, attempt index, ...), so results never depend on evaluation order
or worker count.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def make_rng(seed, *keys):
    """Return a generator for ``seed`` and an optional child-stream path."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(seed, *keys):
    """Deterministic 64-bit integer seed for the child stream ``(seed, *keys)``."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0]) & _MASK64
