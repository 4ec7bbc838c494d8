"""Per-purpose seed derivation from one global seed.

``derive_seed(seed, "maml-tasks")`` hashes the pair, so adding a new consumer
never shifts the random stream of an existing one.
"""
import hashlib

import numpy as np


def derive_seed(seed, purpose):
    digest = hashlib.blake2b(f"{int(seed)}:{purpose}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def rng_for(seed, purpose):
    return np.random.default_rng(derive_seed(seed, purpose))
