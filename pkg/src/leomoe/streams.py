"""Named, replayable random substreams.

Every stochastic piece of the pipeline draws from a substream addressed by
(root seed, name, indices...). Streams with different addresses are
statistically independent, and the draws inside one stream never depend on
how many sibling streams exist, so e.g. doubling a trial count leaves the
first half of the trials bit-identical.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream index must be non-negative, got {part}")
        return int(part)
    raise TypeError(f"stream path parts must be str or int, got {type(part).__name__}")


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Generator for the substream addressed by `path` under `seed`."""
    key = tuple(_key_part(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))
