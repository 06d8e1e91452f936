"""Deterministic seed derivation.

Per-item seeds are derived from a master seed with a counter-based 64-bit
mix, so results never depend on generation order or worker count.
"""

import numpy as np

_MASK = (1 << 64) - 1

# salts keep independent seed streams from colliding
SALT_COORDS = 0x01
SALT_ORACLE = 0x02
SALT_INIT = 0x03
SALT_EPOCH = 0x04
SALT_SAMPLE = 0x05


def splitmix64(x: int) -> int:
    """One round of the splitmix64 mixing function (Steele et al.)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(master: int, salt: int, index: int = 0) -> int:
    """Mix (master, salt, index) into an independent 64-bit child seed."""
    h = splitmix64(master & _MASK)
    h = splitmix64(h ^ splitmix64(salt & _MASK))
    return splitmix64(h ^ splitmix64(index & _MASK))


def generator(master: int, salt: int, index: int = 0) -> np.random.Generator:
    """A PCG64 generator seeded from the derived child seed."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, salt, index)))
