"""Reproducible random substreams.

A substream is keyed by ``(master_seed, label, *indices)`` and backed by the
counter-based Philox generator, so parallel workers can draw independent
streams in any order and still reproduce a run bit for bit.
"""
from __future__ import annotations

import zlib

import numpy as np


def substream_key(master_seed: int, label: str, *indices: int) -> list[int]:
    return [int(master_seed) & 0xFFFFFFFF, zlib.crc32(label.encode("utf-8")), *(int(i) for i in indices)]


def substream(master_seed: int, label: str, *indices: int) -> np.random.Generator:
    seq = np.random.SeedSequence(substream_key(master_seed, label, *indices))
    return np.random.Generator(np.random.Philox(seq))
