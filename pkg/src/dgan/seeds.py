"""One master seed, many independent streams.

Every run takes a single seed; each consumer (init, batching, code
sampling, metrics, ...) derives its own stream by hashing the master
seed with a label. Streams are independent, reproducible, and stable
across runs and platforms; no ambient entropy anywhere.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(master)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(master: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, label))
