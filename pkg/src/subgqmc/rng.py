"""Keyed, counter-based random substreams.

Every stochastic routine in this package draws from a Generator obtained
through :func:`substream`, keyed by a tuple that names the consumer
(seed, purpose, indices...). Streams for different keys are independent
Philox streams, so results are reproducible regardless of execution order
and trials can run in any order or in parallel.
"""

from __future__ import annotations

import hashlib

import numpy as np

_DOMAIN = b"subgqmc\x00"


def stream_key(*parts) -> np.ndarray:
    """Hash an arbitrary key tuple into a 128-bit Philox key.

    Parts must have stable reprs (ints, strings, tuples thereof).
    """
    digest = hashlib.sha256(_DOMAIN + repr(parts).encode()).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64)


def substream(*parts) -> np.random.Generator:
    """Return a fresh Generator for the named substream."""
    return np.random.Generator(np.random.Philox(key=stream_key(*parts)))
