"""Deterministic seed derivation.

All stochastic components draw from numpy Generators keyed by
(root seed, string or integer context) so that per-utterance and per-step
streams are order-independent and reproducible across processes.
"""

import hashlib

import numpy as np


def stable_hash(text: str) -> int:
    """64-bit hash of a string, stable across processes (unlike hash())."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, *context: int | str) -> np.random.Generator:
    """Generator keyed by (seed, context...); pure function of its arguments."""
    entropy = [seed & 0xFFFFFFFFFFFFFFFF]
    for item in context:
        if isinstance(item, str):
            entropy.append(stable_hash(item))
        else:
            entropy.append(int(item) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(entropy)


def derive_seed(seed: int, *context: int | str) -> int:
    """32-bit seed keyed by (seed, context...), for torch.Generator.manual_seed."""
    return int(derive_rng(seed, *context).integers(0, 2**31 - 1))
