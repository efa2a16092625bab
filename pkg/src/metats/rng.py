"""Named, order-independent random streams derived from one master seed.

A stream is addressed by ``(trial, name, *indices)``; the address is folded
into the spawn key of a :class:`numpy.random.SeedSequence`, so streams never
depend on how many other streams were created or in which order.
"""
from __future__ import annotations

import zlib

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(master_seed: int, trial: int, name: str, *indices: int) -> np.random.Generator:
    key = (int(trial), _name_key(name)) + tuple(int(i) for i in indices)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(master_seed), spawn_key=key)))


def sub_seed(master_seed: int, trial: int, name: str, *indices: int) -> int:
    """A 63-bit integer seed for the same address, for places that want a plain int."""
    return int(stream(master_seed, trial, name, *indices).integers(0, 2**63 - 1))
