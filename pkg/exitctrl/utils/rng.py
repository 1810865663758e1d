"""Counter-based random substreams keyed by (master seed, path, block)"""
from typing import Tuple

import numpy as np


# Stream tags keep unrelated consumers of one master seed apart
PATH_STREAM = 0
PROBE_STREAM = 1
BARRIER_STREAM = 3
CHECK_STREAM = 4


def substream(master_seed: int, index: int, block: int = 0, stream: int = PATH_STREAM) -> np.random.Generator:
    """
    Return an independent generator for one (seed, index, block) cell.

    Philox is counter-based: the key selects the stream and the counter
    selects the position, so a cell can be generated without touching
    any other cell.

    Args:
        master_seed: 64-bit master seed
        index: Path index (or sample index for probes)
        block: Block of time steps within the path
        stream: Consumer tag

    Returns:
        numpy Generator positioned at the start of the cell
    """
    key = np.array([master_seed, index], dtype=np.uint64)
    counter = np.array([0, block, stream, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def block_draws(master_seed: int, path: int, block: int, block_len: int, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Standard normals (block_len, m) and bridge uniforms (block_len,) for one path block"""
    gen = substream(master_seed, path, block)
    normals = gen.standard_normal((block_len, m))
    uniforms = gen.random(block_len)
    return normals, uniforms


def probe_generator(seed: int, stream: int = PROBE_STREAM) -> np.random.Generator:
    """Single generator for sequential sampling (assumption probes, test points)"""
    return substream(seed, 0, 0, stream)
