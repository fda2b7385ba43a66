"""Seed fan-out and random generators.

All randomness in the package flows through :func:`make_rng`, which wraps
numpy's Philox-4x64 counter-based generator keyed by a 64-bit seed.  Child
seeds are derived from a master seed with :func:`child_seed`:

    child = first 8 bytes (little endian) of BLAKE2b-64("<master>:<tag>:<index>")

so that independent streams (dataset samples, masks, priors, ...) can be
reproduced from the master seed alone, in any language with BLAKE2b and
Philox.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def child_seed(master: int, tag: str, index: int = 0) -> int:
    msg = f"{int(master) & MASK64}:{tag}:{int(index)}".encode()
    digest = hashlib.blake2b(msg, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & MASK64))
