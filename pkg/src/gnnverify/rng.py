"""Seeded random streams keyed by ``(seed, role)``.

Each consumer (forget-set sampling, weight init, dropout, ...) draws from its
own stream, so adding or reordering consumers never shifts another stream.
"""

import zlib

import numpy as np


def role_key(role: str) -> int:
    return zlib.crc32(role.encode("utf-8"))


def rng_for(seed: int, role: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), role_key(role)]))
