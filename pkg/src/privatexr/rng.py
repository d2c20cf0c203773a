"""Deterministic named random streams.

Every run owns a single 64-bit seed; each subsystem (data generation, weight
init, training noise, feature noise, attacks, ...) pulls an independent child
stream addressed by name so any stage can be reproduced in isolation.
"""

from __future__ import annotations

import zlib

import numpy as np


def child_sequence(seed: int, *labels: str | int) -> np.random.SeedSequence:
    """SeedSequence for the child stream addressed by ``labels`` under ``seed``.

    String labels are hashed with crc32 (stable across platforms and runs);
    integer labels pass through, so (``"shadow"``, i) styles of addressing work.
    """
    key = tuple(
        zlib.crc32(lab.encode("utf-8")) if isinstance(lab, str) else int(lab)
        for lab in labels
    )
    return np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)


def stream(seed: int, *labels: str | int) -> np.random.Generator:
    """Generator for the named child stream. Same (seed, labels) -> same draws."""
    return np.random.default_rng(child_sequence(seed, *labels))


def derive_seed(seed: int, *labels: str | int) -> int:
    """A fresh 63-bit seed for components that take integer seeds themselves."""
    return int(stream(seed, *labels).integers(2**63))
