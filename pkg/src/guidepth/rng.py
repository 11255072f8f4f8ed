"""Named deterministic random streams.

Every stochastic choice in the package draws from a Philox generator
keyed by (seed, stream name, extra indices). Distinct names give
independent streams, and the same (seed, name) always reproduces the
same sequence regardless of what other streams were consumed first.
"""

import zlib

import numpy as np


def substream(seed, *names):
    """A Generator keyed by a base seed plus string/int qualifiers."""
    keys = [int(seed)]
    for name in names:
        if isinstance(name, (int, np.integer)):
            keys.append(int(name))
        else:
            keys.append(zlib.crc32(str(name).encode()))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(keys)))
