"""Named random sub-streams derived from one root seed."""
import zlib

import numpy as np


def stream(seed, name, *extra):
    """Independent generator for ``(seed, name, *extra)``.

    Stream names are hashed with crc32 so the mapping is stable across
    processes and platforms.
    """
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    key.extend(int(e) & 0xFFFFFFFF for e in extra)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


_MASK64 = (1 << 64) - 1


def mix64(x):
    """splitmix64 finaliser on a Python int."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def hash_tokens(seed, salt, tokens):
    h = mix64((int(seed) << 8) ^ salt)
    for t in tokens:
        h = mix64(h ^ (int(t) + 1))
    return h
