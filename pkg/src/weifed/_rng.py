"""Seed plumbing: every random draw hangs off a tuple of non-negative ints."""

from __future__ import annotations

import numpy as np


def as_key(seed) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def derive(seed, *keys: int) -> tuple[int, ...]:
    """Child seed for a sub-stream, e.g. ``derive(master, client_id, round)``."""
    return as_key(seed) + tuple(int(k) for k in keys)


def rng(seed, *keys: int) -> np.random.Generator:
    return np.random.default_rng(list(derive(seed, *keys)))
