"""Named, independent random substreams.

Every stochastic draw in a drop comes from a stream keyed by
(drop seed, purpose, entity indices). Streams are derived through
`SeedSequence` entropy tuples, so adding or removing draws in one
subsystem can never perturb any other subsystem — a prerequisite for
matched-seed A/B comparisons between cooperation schemes.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_ints(key) -> list:
    out = []
    for part in key:
        if isinstance(part, str):
            out.append(zlib.crc32(part.encode("utf-8")))
        elif isinstance(part, (int, np.integer)):
            out.append(int(part) & 0xFFFFFFFF)
        else:
            raise TypeError(f"substream keys must be str or int, got {type(part)}")
    return out


def substream(drop_seed: int, *key) -> np.random.Generator:
    """Generator for the (drop_seed, *key) stream; stable across runs."""
    entropy = [int(drop_seed) & 0xFFFFFFFFFFFFFFFF] + _key_to_ints(key)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
