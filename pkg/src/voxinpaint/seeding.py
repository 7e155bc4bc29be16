"""Deterministic seed derivation.  There is no global RNG: every stochastic
step receives a generator built from a derived seed."""

from __future__ import annotations

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def derive_seed(root_seed: int, stage_tag: str, epoch: int = 0, item_id: str | int = "") -> int:
    """64-bit hash of the tuple, folded into the non-negative int64 range."""
    key = f"{int(root_seed)}\x1f{stage_tag}\x1f{int(epoch)}\x1f{item_id}".encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "little") & _MASK63


def rng_for(root_seed: int, stage_tag: str, epoch: int = 0, item_id: str | int = "") -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, stage_tag, epoch, item_id))
