"""Deterministic random-stream layout for the simulation harness.

The Monte Carlo engine splits work into fixed-size chunks of paths. Each
chunk draws from its own counter-based generator, keyed by (master seed,
component, chunk index). The layout has two consequences the test suite
relies on:

* the Brownian/jump driver and the loss process never share a stream, so
  they are independent by construction;
* results do not depend on how chunks are scheduled across threads, because
  streams are keyed by chunk index, not by worker.

Chunk size is a package constant. Changing it changes the draws, so it is
recorded in every report manifest.
"""

from __future__ import annotations

import numpy as np

from .errors import RngError

__all__ = [
    "CHUNK_SIZE",
    "STREAM_LEVY",
    "STREAM_LOSS",
    "check_seed",
    "chunk_generator",
    "chunk_ranges",
    "single_generator",
]

CHUNK_SIZE = 16384

# Component identifiers baked into the stream key.
STREAM_LEVY = 0
STREAM_LOSS = 1


def check_seed(seed) -> int:
    """Validate a user-provided seed and return it as a Python int.

    Raises RngError for None, negatives, and non-integers (bools included:
    a bool seed is almost certainly a bug at the call site).
    """
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise RngError(f"seed must be a non-negative integer, got {seed!r}")
    if seed < 0:
        raise RngError(f"seed must be non-negative, got {seed}")
    return int(seed)


def single_generator(seed) -> np.random.Generator:
    """Generator for the single-path simulation APIs."""
    seed = check_seed(seed)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def chunk_generator(seed, component: int, chunk_index: int) -> np.random.Generator:
    """Generator for one (component, chunk) cell of a bulk simulation."""
    seed = check_seed(seed)
    if component not in (STREAM_LEVY, STREAM_LOSS):
        raise RngError(f"unknown stream component {component}")
    if chunk_index < 0:
        raise RngError(f"chunk index must be non-negative, got {chunk_index}")
    key = np.random.SeedSequence(entropy=seed, spawn_key=(component, chunk_index))
    return np.random.Generator(np.random.Philox(key))


def chunk_ranges(n_paths: int) -> list[tuple[int, int, int]]:
    """Partition ``n_paths`` into (chunk_index, start, stop) triples."""
    if n_paths <= 0:
        raise RngError(f"path count must be positive, got {n_paths}")
    out = []
    start = 0
    idx = 0
    while start < n_paths:
        stop = min(start + CHUNK_SIZE, n_paths)
        out.append((idx, start, stop))
        start = stop
        idx += 1
    return out
