"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(master seed, stream id)``
through :class:`numpy.random.SeedSequence`. Paths are assigned to streams in
fixed blocks of :data:`STREAM_PATHS`, so the sample set depends only on the
master seed and the path count, never on how streams are spread over workers.
"""
from __future__ import annotations

import numpy as np

STREAM_PATHS = 4096
SEED_RULE = (
    "stream s uses Philox(SeedSequence(entropy=seed, spawn_key=(s,))); "
    f"paths [s*{STREAM_PATHS}, (s+1)*{STREAM_PATHS}) belong to stream s; "
    "within a stream: all Gaussian increments (row-major), then all bridge uniforms"
)

MAX_SEED = 2**64 - 1


def stream_rng(seed: int, stream_id: int) -> np.random.Generator:
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError("seed must be a 64-bit unsigned integer")
    if stream_id < 0:
        raise ValueError("stream_id must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))


def stream_layout(n_paths: int, block: int = STREAM_PATHS) -> list[tuple[int, int]]:
    """Return ``(stream_id, count)`` pairs covering ``n_paths`` paths in order."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    layout = []
    sid = 0
    remaining = int(n_paths)
    while remaining > 0:
        count = min(block, remaining)
        layout.append((sid, count))
        remaining -= count
        sid += 1
    return layout
