"""Counter-based random streams.

Every stream is a Philox generator keyed by a ``SeedSequence`` whose spawn
key names what the numbers are for.  Test matrices are split into fixed
tiles, each with its own key ``(plane, tile_row, tile_col)``, so any
sub-block can be regenerated on demand without replaying the rest of the
matrix.  Monte Carlo trials use keys ``(purpose, trial)`` and are therefore
independent of the order in which trials run.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import ParameterError

__all__ = ["TILE", "check_seed", "stream", "tile_stream", "trial_stream"]

TILE = 256
_SEED_LIMIT = 1 << 64


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < _SEED_LIMIT:
        raise ParameterError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``seed`` and an integer key path."""
    ss = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def tile_stream(seed: int, plane: int, tile_row: int, tile_col: int) -> np.random.Generator:
    return stream(seed, 0, plane, tile_row, tile_col)


def _purpose_tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode())


def trial_stream(seed: int, purpose: str, trial: int) -> np.random.Generator:
    """Generator for one Monte Carlo trial; ``purpose`` separates unrelated experiments."""
    return stream(seed, 1, _purpose_tag(purpose), trial)
