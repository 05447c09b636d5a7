"""Named random streams derived from one seed.

Each consumer asks for its own stream by name, so adding a consumer never
shifts the numbers another one sees.
"""
import zlib

import numpy as np

SAMPLING = "sampling"
LYAPUNOV_OFFSET = "lyapunov-offset"


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(key,))))
