"""Named random substreams derived from a single run seed."""
import zlib

import numpy as np


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``name`` (e.g. "split", "init", "shuffle", "noise")."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode()), *extra]))


def subseed(seed: int, name: str, *extra: int) -> int:
    return int(np.random.SeedSequence([int(seed), zlib.crc32(name.encode()), *extra]).generate_state(1)[0])
