"""Seed derivation so every stream (experiment, repetition, role) is independent"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, *tags) -> int:
    """
    Mix a master seed with string tags into a 64-bit sub-seed

    The mix is blake2b over the decimal master seed followed by each tag,
    separated by NUL bytes, truncated to 8 bytes (little endian).
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master) & _MASK64).encode())
    for tag in tags:
        h.update(b"\x00")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest(), "little")


def make_rng(master: int, *tags) -> np.random.Generator:
    """numpy Generator on the derived stream"""
    return np.random.default_rng(derive_seed(master, *tags))


def make_torch_generator(master: int, *tags) -> torch.Generator:
    """torch CPU Generator on the derived stream"""
    gen = torch.Generator()
    # torch seeds must fit in a signed 64-bit integer
    gen.manual_seed(derive_seed(master, *tags) >> 1)
    return gen
