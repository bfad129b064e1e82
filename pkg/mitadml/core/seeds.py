"""Labeled seed derivation so that every stream of randomness traces back to one seed."""

import hashlib
from typing import Union

import numpy as np

Label = Union[str, int, float]

_SEED_BITS = 63


def derive_seed(base: int, *labels: Label) -> int:
    """
    Derive a child seed from a base seed and a sequence of labels.

    The same (base, labels) pair always yields the same seed, independent of
    the order in which other seeds were derived.

    Args:
        base: Parent seed
        *labels: Labels naming the consumer (e.g. "fold", 3, "outcome")

    Returns:
        A non-negative integer seed
    """
    text = "/".join([str(int(base))] + [str(label) for label in labels])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") & ((1 << _SEED_BITS) - 1)


def rng_for(base: int, *labels: Label) -> np.random.Generator:
    """Return a numpy Generator seeded with derive_seed(base, *labels)."""
    return np.random.default_rng(derive_seed(base, *labels))
