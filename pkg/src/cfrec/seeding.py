"""Deterministic sub-seed derivation.

Every run hands out a single master seed. Stages (init, shuffling, user
sampling, per-removal continuation training, ...) draw their own RNG from
``derive_seed(master, label)`` so that adding a stage never perturbs the
randomness of existing ones. The derivation is a fixed function of the
decimal master seed and the label string: the first 8 bytes, little endian,
of ``sha256(f"{master}:{label}")``.
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, label: str) -> int:
    """Stable 64-bit sub-seed for one named stage of a run."""
    digest = hashlib.sha256(f"{master}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
