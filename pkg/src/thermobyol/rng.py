"""Deterministic random-stream derivation.

Every source of randomness in the package is a numpy Generator derived from
one root seed plus a tuple of stream names, so parallel workers and repeated
runs stay reproducible.
"""

import hashlib

import numpy as np


def _name_words(names):
    out = []
    for name in names:
        digest = hashlib.blake2s(str(name).encode("utf-8"), digest_size=8).digest()
        out.append(int.from_bytes(digest[:4], "little"))
        out.append(int.from_bytes(digest[4:], "little"))
    return out


def derive_rng(root_seed: int, *names) -> np.random.Generator:
    """Generator for the stream identified by (root_seed, *names)."""
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF] + _name_words(names)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(root_seed: int, *names) -> int:
    """Stable 64-bit sub-seed for handing to code that wants an int seed."""
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF] + _name_words(names)
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])
