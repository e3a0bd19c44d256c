"""Reproducible random streams.

Every stochastic component of the package draws from numpy's Philox bit
generator (Philox 4x64 with 10 rounds, a counter-based generator with a
published algorithm), so that runs are reproducible bit-for-bit from a
single integer seed and independent streams can be split without
coordination.

Stream ``i`` of master seed ``s`` is ``Philox(key=s).jumped(i)``: jumping
advances the 256-bit counter by ``i * 2**128`` draws, so distinct stream
indices can never overlap. Parallel repetitions of a simulation each take
their own stream index and merge results by index, which makes the output
independent of scheduling order.
"""

from __future__ import annotations

import numpy as np

__all__ = ["master_rng", "stream_rng"]


def master_rng(seed: int) -> np.random.Generator:
    """Generator for the master stream of ``seed``."""
    return np.random.Generator(np.random.Philox(key=seed))


def stream_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for sub-stream ``index`` of ``seed``.

    Streams with distinct indices are non-overlapping segments of the same
    Philox sequence, so they behave as independent generators.
    """
    if index < 0:
        raise ValueError("stream index must be nonnegative")
    return np.random.Generator(np.random.Philox(key=seed).jumped(index))
