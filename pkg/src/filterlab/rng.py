"""Deterministic random-stream splitting.

A single 64-bit experiment seed fans out into independent substreams keyed by
an integer path (seed, *path). The convention used across the package is

    substream(seed, replica, role)            for per-replica streams
    substream(seed, replica, role, particle)  when per-particle streams matter

so any sub-experiment can be re-run in isolation and results do not depend on
worker count or scheduling. Roles are small integers from the table below.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

# Stream roles. Keep values stable: they are part of the reproducibility
# contract (same seed => same numbers).
ROLE_INITIAL = 0      # initial-condition draws
ROLE_SIGNAL = 1       # signal-noise increments (V)
ROLE_OBS = 2          # observation-noise increments (W or Wtilde)
ROLE_ORTHO = 3        # orthogonal-complement draws in conditional simulation
ROLE_MATRIX = 4       # random-matrix generation (pinv suite)
ROLE_SAMPLING = 5     # generic sampling (assumption checks, bootstrap, ...)


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream identified by (seed, *path)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.default_rng(ss)


def parallel_map(fn, items, workers: int = 1):
    """Order-preserving map, optionally on a thread pool.

    Results are identical for any worker count: each item is evaluated
    independently (callers pass pre-split rng substreams) and collected by
    index.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    out = [None] * len(items)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(fn, it): i for i, it in enumerate(items)}
        for fut, i in futures.items():
            out[i] = fut.result()
    return out
