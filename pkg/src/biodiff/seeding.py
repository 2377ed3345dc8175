"""Derive independent, named random streams from one integer seed."""

from __future__ import annotations

import zlib

import numpy as np
import torch


def substream_seed(seed: int, name: str, *extra: int) -> int:
    """A 63-bit seed for the stream ``name`` (plus optional indices) under ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode()), *map(int, extra)])
    hi, lo = (int(v) for v in ss.generate_state(2, dtype=np.uint32))
    return ((hi << 32) | lo) & ((1 << 63) - 1)


def numpy_rng(seed: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(substream_seed(seed, name, *extra))


def torch_gen(seed: int, name: str, *extra: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(substream_seed(seed, name, *extra))
    return g
