"""Counter-based random streams.

Draws are produced in fixed-size blocks.  Block ``b`` of a run keyed by
``seed`` comes from a Philox generator whose 128-bit key is ``(seed, b)``, so
the numbers attached to a given draw index depend only on the seed and the
block size, never on how blocks are distributed over workers.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK = 1 << 14


def block_generator(seed: int, block: int) -> np.random.Generator:
    if seed is None:
        raise ValueError("a seed is mandatory")
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(block)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def block_sizes(total: int, block: int = BLOCK):
    full, rest = divmod(int(total), block)
    sizes = [block] * full
    if rest:
        sizes.append(rest)
    return sizes


def map_blocks(fn, seed: int, total: int, workers: int = 1, block: int = BLOCK):
    """Evaluate ``fn(rng, size)`` on every block and return results in block order."""
    sizes = block_sizes(total, block)
    jobs = [(block_generator(seed, b), size) for b, size in enumerate(sizes)]
    if workers <= 1 or len(jobs) == 1:
        return [fn(rng, size) for rng, size in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
