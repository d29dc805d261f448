"""Seed derivation and random streams.

Every stream in the simulator is a numpy ``Generator`` over the Philox 4x64
counter-based bit generator. Module seeds are derived from the master seed as

    seed = uint64(blake2b("{master}/{module}/{round}/{client}", digest_size=8), little-endian)

so any implementation with blake2b and Philox4x64-10 reproduces the streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, module: str, round_index: int = 0, client_id: int = 0) -> int:
    key = f"{int(master_seed)}/{module}/{int(round_index)}/{int(client_id)}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def stream(master_seed: int, module: str, round_index: int = 0, client_id: int = 0) -> np.random.Generator:
    return generator(derive_seed(master_seed, module, round_index, client_id))
