"""Per-run random streams keyed on content, not on position.

Each stream is a ``SeedSequence`` built from the master seed and a blake2b
digest of ``(run key, role)``. Adding or removing runs never shifts the
streams of the others.
"""

from __future__ import annotations

import hashlib

import numpy as np

ROLES = ("train_set", "trainer", "sampling", "trajectory")


def seed_sequence(master_seed: int, key: str, role: str) -> np.random.SeedSequence:
    if role not in ROLES:
        raise ValueError(f"unknown seed role {role!r}; expected one of {ROLES}")
    digest = hashlib.blake2b(f"{key}\x00{role}".encode(), digest_size=16).digest()
    words = np.frombuffer(digest, dtype="<u4").tolist()
    return np.random.SeedSequence([int(master_seed), *words])


def derive_rng(master_seed: int, key: str, role: str) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master_seed, key, role))


def derive_seed(master_seed: int, key: str, role: str) -> int:
    """A 63-bit integer seed, for APIs that take an ``int``."""
    return int(seed_sequence(master_seed, key, role).generate_state(1, np.uint64)[0] >> np.uint64(1))
