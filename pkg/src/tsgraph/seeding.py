"""Deterministic RNG derivation: one run seed, named sub-streams."""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["named_rng", "named_seed"]


def named_seed(seed: int, name: str) -> np.random.SeedSequence:
    """Stable sub-seed for a purpose (`data`, `init`, `shuffle`, ...)."""
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])


def named_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(named_seed(seed, name))
