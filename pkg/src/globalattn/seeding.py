"""Deterministic seed derivation.

Every random draw in the package flows from one user-facing 64-bit seed.
Independent streams (model init, shuffling, noise for image i, ...) are
derived by XOR-ing the seed with a stream id and passing the result through
a splitmix-style 64-bit mix, then feeding that into ``numpy``'s PCG64
generator.  Stream ids for named components are FNV-1a hashes of short tag
strings; per-image streams use the image index directly.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def splitmix64(x: int) -> int:
    """One output step of the splitmix64 mixing function."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix_seed(seed: int, stream: int) -> int:
    """Derive the sub-seed for ``stream`` from the master ``seed``."""
    return splitmix64((seed ^ stream) & _MASK64)


def stream_tag(name: str) -> int:
    """Stream id for a named component."""
    return fnv1a64(name.encode("utf-8"))


def rng_for(seed: int, stream: int) -> np.random.Generator:
    """PCG64 generator seeded from ``mix_seed(seed, stream)``."""
    return np.random.default_rng(mix_seed(seed, stream))


# Named streams.  Per-image noise streams use the raw image index instead.
ATTENTION_INIT = stream_tag("attention-init")
CLASSIFIER_INIT = stream_tag("classifier-init")
SHUFFLE = stream_tag("epoch-shuffle")
TEMPLATES = stream_tag("synthetic-templates")
SPLIT = stream_tag("train-test-split")
CV_FOLDS = stream_tag("cv-folds")
