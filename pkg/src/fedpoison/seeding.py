"""Deterministic RNG stream derivation.

Every random draw in a run flows through a generator derived from the
master seed plus a (purpose, agent, round, extra) tuple, so no stream is
ever reused across purposes and any single stream can be reproduced in
isolation.
"""

import hashlib

import numpy as np


def derive_seed(master: int, purpose: str, agent: int = -1, round_index: int = -1,
                extra: int = -1) -> np.random.SeedSequence:
    """Hash (master, purpose, agent, round, extra) into a SeedSequence."""
    key = f"{master}|{purpose}|{agent}|{round_index}|{extra}".encode()
    digest = hashlib.sha256(key).digest()
    words = [int.from_bytes(digest[i:i + 4], "big") for i in range(0, 16, 4)]
    return np.random.SeedSequence(words)


def derive_rng(master: int, purpose: str, agent: int = -1, round_index: int = -1,
               extra: int = -1) -> np.random.Generator:
    """Independent generator for one (purpose, agent, round, extra) slot."""
    return np.random.default_rng(derive_seed(master, purpose, agent, round_index, extra))
