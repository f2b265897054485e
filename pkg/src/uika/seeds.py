"""Named random streams derived from a single root seed.

Every source of randomness in a run (sampling, parameter init, batch
shuffling, dropout, ...) draws from its own stream, keyed by a stable
name path.  Re-running a single stage standalone therefore consumes the
exact same stream it would consume inside the full pipeline.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_seed(root_seed: int, *names: str) -> int:
    """Derive a 63-bit seed for the stream named by ``names``.

    Uses SHA-256 rather than ``hash()`` so the derivation is stable
    across interpreter runs and processes.
    """
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode("utf-8"))
    for name in names:
        h.update(b"/")
        h.update(name.encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little") & 0x7FFFFFFFFFFFFFFF


def stream_rng(root_seed: int, *names: str) -> np.random.Generator:
    """A fresh ``numpy`` generator for the named stream."""
    return np.random.default_rng(stream_seed(root_seed, *names))
